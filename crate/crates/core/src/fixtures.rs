//! Deterministic planted inspection set: 25 site images with matching audio
//! notes, three audio decoys from unrelated locations, a small regulation
//! corpus and the ground-truth citations for each site.
//!
//! Everything is generated in memory; [`FixtureSet::write_to`] lays it out
//! on disk in the directory structure the CLI expects.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};

use crate::eval::GroundTruth;
use crate::fsutil::write_atomic;
use crate::matcher::{format_timestamp, Annotated};
use crate::provider::media::{encode_png, encode_wav};

const ADDRESSES: [&str; 25] = [
    "12 York St, Sydney, NSW 2000",
    "45 Church St, Parramatta, NSW 2150",
    "7 Victoria Rd, Rozelle, NSW 2039",
    "210 Pacific Hwy, Chatswood, NSW 2067",
    "33 Crown St, Wollongong, NSW 2500",
    "18 Hunter St, Newcastle, NSW 2300",
    "5 Oxford St, Paddington, NSW 2021",
    "91 King St, Newtown, NSW 2042",
    "140 Marion St, Leichhardt, NSW 2040",
    "62 Hume Hwy, Liverpool, NSW 2170",
    "9 Anzac Pde, Maroubra, NSW 2035",
    "301 Princes Hwy, Kogarah, NSW 2217",
    "27 Railway Pde, Burwood, NSW 2134",
    "14 Station St, Penrith, NSW 2750",
    "76 Macquarie St, Dubbo, NSW 2830",
    "50 Terrigal Dr, Terrigal, NSW 2260",
    "3 Banna Ave, Griffith, NSW 2680",
    "118 Auburn St, Goulburn, NSW 2580",
    "8 Mann St, Gosford, NSW 2250",
    "41 Peel St, Tamworth, NSW 2340",
    "66 Baylis St, Wagga Wagga, NSW 2650",
    "15 Summer St, Orange, NSW 2800",
    "230 Beaumont St, Hamilton, NSW 2303",
    "19 Belgrave St, Kempsey, NSW 2440",
    "55 Dean St, Albury, NSW 2640",
];

const DECOY_LOCATIONS: [&str; 3] = [
    "Parramatta Road, Granville, NSW 2142",
    "Harbour Bridge approach, Milsons Point",
    "Olympic Boulevard, Homebush Bay",
];

struct Scenario {
    caption: &'static str,
    caption_pages: &'static [u32],
    transcript: &'static str,
    transcript_pages: &'static [u32],
}

const SCENARIOS: [Scenario; 5] = [
    Scenario {
        caption: "Multi-bay metal scaffold on a building facade. Two workers adjust scaffold \
                  members at height; the upper worker has no harness attached. No toe boards \
                  are fitted at the platform edge.",
        caption_pages: &[22, 56, 85],
        transcript: "The two workers on the scaffolding were working at height and neither wore \
                     high-visibility safety reflective vests.",
        transcript_pages: &[83],
    },
    Scenario {
        caption: "Open excavation trench beside the footpath with spoil heaped at the trench \
                  edge and no shoring visible.",
        caption_pages: &[31, 90],
        transcript: "An electrical cable runs unprotected along the trench edge where the \
                     excavator is working.",
        transcript_pages: &[47],
    },
    Scenario {
        caption: "Timber and steel stacked loosely on a first floor slab near an open edge, \
                  with debris scattered on the ground below.",
        caption_pages: &[85, 90],
        transcript: "Workers were lifting heavy bundles by hand with overreach at the slab edge.",
        transcript_pages: &[62],
    },
    Scenario {
        caption: "Roof sheeting crew working at height near an unprotected roof edge; the \
                  guardrail is missing along the eaves.",
        caption_pages: &[22, 23],
        transcript: "One roofer had no hard hat and was not wearing a hi-vis vest.",
        transcript_pages: &[83, 84],
    },
    Scenario {
        caption: "Temporary switchboard with extension leads; an electric cable lies across \
                  the walkway in standing water.",
        caption_pages: &[47, 90],
        transcript: "The cable insulation was damaged and no test tag was present on the lead.",
        transcript_pages: &[47],
    },
];

const CORPUS: [(u32, &str); 12] = [
    (10, "Site amenities: toilets, drinking water, first aid rooms and lunch sheds for workers."),
    (12, "Noise management: hearing protection, plant noise limits and quiet hours."),
    (22, "Working at height: prevent falls with guardrails, harness and fall arrest anchors for workers at height on roofs and scaffold."),
    (23, "Fall prevention: roof edge protection, guardrail systems, harness anchor points and work positioning."),
    (31, "Excavation: trench shoring, benching and spoil placement away from the excavation edge."),
    (47, "Electrical safety: extension leads, cable protection, test tag inspection and switchboard covers."),
    (56, "Scaffold safety: platform guardrails, mid rails, toe boards, scaffold inspection and tagging."),
    (62, "Manual handling: lifting heavy loads with mechanical aids, team lifting and avoiding overreach."),
    (83, "Personal protective equipment: high-visibility reflective vests, hard hats and gloves must be worn."),
    (84, "PPE selection: hi-vis clothing, hard hat and protective clothing suitable for site conditions."),
    (85, "Falling objects: toe boards, containment mesh, secure stacked materials and exclusion zones below."),
    (90, "Housekeeping: debris removal, clear walkways, spoil and waste storage."),
];

/// Minutes the audio note is recorded after the photo, per position in a
/// time group. Non-zero offsets exercise window matching.
const AUDIO_OFFSETS_MIN: [i64; 5] = [0, 0, 0, 12, 7];

#[derive(Debug, Clone)]
pub struct Site {
    pub image_id: String,
    pub audio_id: String,
    pub image_time: NaiveDateTime,
    pub audio_time: NaiveDateTime,
    pub location: String,
    pub audio_location: String,
    /// Full caption text, header included.
    pub caption: String,
    /// Full transcript text, header included.
    pub transcript: String,
    /// Pages an ideal report for this site cites.
    pub gt_pages: BTreeSet<u32>,
    /// Pages supported by the caption alone.
    pub caption_pages: BTreeSet<u32>,
}

#[derive(Debug, Clone)]
pub struct Decoy {
    pub audio_id: String,
    pub time: NaiveDateTime,
    pub location: String,
    pub transcript: String,
}

#[derive(Debug, Clone)]
pub struct CorpusPage {
    pub page: u32,
    pub text: String,
}

impl CorpusPage {
    pub fn id(&self) -> String {
        self.page.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub sites: Vec<Site>,
    pub decoys: Vec<Decoy>,
    pub corpus: Vec<CorpusPage>,
}

/// On-disk layout written by [`FixtureSet::write_to`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub images: PathBuf,
    pub audio: PathBuf,
    pub corpus: PathBuf,
    pub ground_truth: PathBuf,
}

fn audio_variant(location: &str, i: usize) -> String {
    if i.is_multiple_of(2) {
        return location.to_string();
    }
    let words: Vec<String> = location
        .split(' ')
        .map(|w| {
            let (core, comma) = w.strip_suffix(',').map_or((w, ""), |c| (c, ","));
            let full = match core {
                "St" => "Street",
                "Rd" => "Road",
                "Hwy" => "Highway",
                "Pde" => "Parade",
                "Dr" => "Drive",
                "Ave" => "Avenue",
                other => other,
            };
            format!("{full}{comma}")
        })
        .collect();
    words.join(" ")
}

/// Renders a lower-case "a.m."/"p.m." variant, as dictated notes tend to.
fn spoken_time(ts: &NaiveDateTime) -> String {
    format_timestamp(ts)
        .replace(" AM", " a.m.")
        .replace(" PM", " p.m.")
}

fn luma(width: u32, height: u32, seed: u32) -> Vec<u8> {
    (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| {
                let v = x.wrapping_mul(7 + seed % 5)
                    ^ y.wrapping_mul(3 + seed % 7)
                    ^ seed.wrapping_mul(31);
                (v % 256) as u8
            })
        })
        .collect()
}

fn tone(seed: u32) -> Vec<i16> {
    (0..800u32)
        .map(|n| (((n * (seed + 3)) % 64) as i16 - 32) * 200)
        .collect()
}

/// The planted 25-site set.
pub fn planted() -> FixtureSet {
    let base = NaiveDate::from_ymd_opt(2025, 2, 2)
        .unwrap()
        .and_hms_opt(8, 0, 0)
        .unwrap();
    let sites = ADDRESSES
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            // five groups of five sites photographed at the same minute
            let image_time = base + Duration::hours(2 * (i / 5) as i64);
            let audio_time = image_time + Duration::minutes(AUDIO_OFFSETS_MIN[i % 5]);
            let sc = &SCENARIOS[i % SCENARIOS.len()];
            let audio_location = audio_variant(loc, i);
            let caption = format!(
                "Time: {} Location: {}\n{}",
                format_timestamp(&image_time),
                loc,
                squash(sc.caption)
            );
            let transcript = format!(
                "Time: {} Location: {}\n{}",
                spoken_time(&audio_time),
                audio_location,
                squash(sc.transcript)
            );
            let caption_pages: BTreeSet<u32> = sc.caption_pages.iter().copied().collect();
            let mut gt_pages = caption_pages.clone();
            gt_pages.extend(sc.transcript_pages);
            // audio ids are deliberately not aligned with image ids
            let audio_no = (i * 7 + 3) % 25 + 1;
            Site {
                image_id: format!("site{:02}", i + 1),
                audio_id: format!("rec{audio_no:02}"),
                image_time,
                audio_time,
                location: loc.to_string(),
                audio_location,
                caption,
                transcript,
                gt_pages,
                caption_pages,
            }
        })
        .collect();
    let decoys = DECOY_LOCATIONS
        .iter()
        .enumerate()
        .map(|(j, loc)| {
            let time = base + Duration::hours(4 * j as i64) + Duration::minutes(5);
            Decoy {
                audio_id: format!("rec{:02}", 26 + j),
                time,
                location: loc.to_string(),
                transcript: format!(
                    "Time: {} Location: {}\nDelivery truck unloading pallets at the gate; \
                     traffic controller present.",
                    spoken_time(&time),
                    loc
                ),
            }
        })
        .collect();
    let corpus = CORPUS
        .iter()
        .map(|(p, t)| CorpusPage {
            page: *p,
            text: t.to_string(),
        })
        .collect();
    FixtureSet {
        sites,
        decoys,
        corpus,
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl FixtureSet {
    pub fn image_bytes(&self, i: usize) -> Vec<u8> {
        encode_png(
            64,
            48,
            &luma(64, 48, i as u32),
            Some(&self.sites[i].caption),
        )
        .expect("fixture png")
    }

    pub fn audio_bytes(&self, i: usize) -> Vec<u8> {
        encode_wav(&tone(i as u32), 8000, Some(&self.sites[i].transcript))
    }

    pub fn decoy_bytes(&self, j: usize) -> Vec<u8> {
        encode_wav(
            &tone(100 + j as u32),
            8000,
            Some(&self.decoys[j].transcript),
        )
    }

    pub fn page_bytes(&self, j: usize) -> Vec<u8> {
        let p = &self.corpus[j];
        encode_png(128, 128, &luma(128, 128, 1000 + p.page), Some(&p.text)).expect("fixture png")
    }

    /// `(page_id, png bytes)` in page order.
    pub fn corpus_pages(&self) -> Vec<(String, Vec<u8>)> {
        (0..self.corpus.len())
            .map(|j| (self.corpus[j].id(), self.page_bytes(j)))
            .collect()
    }

    pub fn annotated_images(&self) -> Vec<Annotated> {
        self.sites
            .iter()
            .map(|s| Annotated::from_text(&s.image_id, &s.caption))
            .collect()
    }

    /// Site notes followed by decoys.
    pub fn annotated_audio(&self) -> Vec<Annotated> {
        self.sites
            .iter()
            .map(|s| Annotated::from_text(&s.audio_id, &s.transcript))
            .chain(
                self.decoys
                    .iter()
                    .map(|d| Annotated::from_text(&d.audio_id, &d.transcript)),
            )
            .collect()
    }

    /// `(image_id, audio_id)` of every true pair.
    pub fn expected_pairs(&self) -> BTreeSet<(String, String)> {
        self.sites
            .iter()
            .map(|s| (s.image_id.clone(), s.audio_id.clone()))
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let universe = self.corpus.iter().map(CorpusPage::id).collect();
        let reports: BTreeMap<String, BTreeSet<String>> = self
            .sites
            .iter()
            .map(|s| {
                (
                    s.image_id.clone(),
                    s.gt_pages.iter().map(u32::to_string).collect(),
                )
            })
            .collect();
        GroundTruth::new(universe, reports).expect("fixture ground truth is consistent")
    }

    /// Writes `images/`, `audio/`, `corpus/` and `gt.json` under `root`.
    pub fn write_to(&self, root: &Path) -> io::Result<FixturePaths> {
        let paths = FixturePaths {
            root: root.to_path_buf(),
            images: root.join("images"),
            audio: root.join("audio"),
            corpus: root.join("corpus"),
            ground_truth: root.join("gt.json"),
        };
        for d in [&paths.images, &paths.audio, &paths.corpus] {
            std::fs::create_dir_all(d)?;
        }
        for (i, s) in self.sites.iter().enumerate() {
            write_atomic(
                &paths.images.join(format!("{}.png", s.image_id)),
                &self.image_bytes(i),
            )?;
            write_atomic(
                &paths.audio.join(format!("{}.wav", s.audio_id)),
                &self.audio_bytes(i),
            )?;
        }
        for (j, d) in self.decoys.iter().enumerate() {
            write_atomic(
                &paths.audio.join(format!("{}.wav", d.audio_id)),
                &self.decoy_bytes(j),
            )?;
        }
        for (id, bytes) in self.corpus_pages() {
            write_atomic(&paths.corpus.join(format!("{id}.png")), &bytes)?;
        }
        let gt = serde_json::to_vec_pretty(&self.ground_truth()).map_err(io::Error::other)?;
        write_atomic(&paths.ground_truth, &gt)?;
        Ok(paths)
    }
}
