//! Writes the planted 25-site fixture set (images, audio, corpus, gt.json).
//!
//! `cargo run -p siteinspect-core --example make_fixtures -- <dir>`

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let paths = siteinspect::fixtures::planted()
        .write_to(std::path::Path::new(&dir))
        .expect("writing fixtures");
    println!("images      {}", paths.images.display());
    println!("audio       {}", paths.audio.display());
    println!("corpus      {}", paths.corpus.display());
    println!("ground truth {}", paths.ground_truth.display());
}
