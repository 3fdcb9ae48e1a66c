use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::AnomalyLabel;
use crate::error::{Error, Result};
use crate::ingest::{read_jsonl, write_jsonl};

use super::{summarize, Case, CaseView, LabelScore, ReaderResponse, ReadingMode, StudySummary};

pub fn read_cases(path: &Path) -> Result<Vec<Case>> {
    let cases: Vec<Case> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for c in &cases {
        c.validate()?;
        if !seen.insert(c.case_id.as_str()) {
            return Err(Error::Validation(format!("duplicate case id {}", c.case_id)));
        }
    }
    Ok(cases)
}

pub fn write_cases(path: &Path, cases: &[Case]) -> Result<()> {
    write_jsonl(path, cases)
}

pub fn read_responses(path: &Path) -> Result<Vec<ReaderResponse>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

/// Where a study keeps its files.
#[derive(Debug, Clone)]
pub struct StudyPaths {
    pub cases: PathBuf,
    pub data_dir: PathBuf,
}

impl StudyPaths {
    pub fn readers(&self) -> PathBuf {
        self.data_dir.join("readers.json")
    }

    pub fn responses(&self) -> PathBuf {
        self.data_dir.join("responses.jsonl")
    }
}

#[derive(Default)]
struct Log {
    responses: Vec<ReaderResponse>,
    answered: HashSet<(String, String)>,
}

/// Case index, reader registry and response log of one running study.
pub struct ReaderStudy {
    paths: StudyPaths,
    cases: Vec<Case>,
    by_id: HashMap<String, usize>,
    case_root: PathBuf,
    readers: RwLock<BTreeSet<String>>,
    log: RwLock<Log>,
    /// Serialises appends; the duplicate check happens under this lock.
    writer: Mutex<File>,
    admin_token: Option<String>,
}

fn shuffle_seed(reader_id: &str) -> u64 {
    let digest = Sha256::digest(reader_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl ReaderStudy {
    /// Loads the case index and replays any existing response log.
    pub fn open(paths: StudyPaths, admin_token: Option<String>) -> Result<ReaderStudy> {
        let cases = read_cases(&paths.cases)?;
        let by_id: HashMap<String, usize> = cases.iter().enumerate().map(|(i, c)| (c.case_id.clone(), i)).collect();
        let case_root = paths.cases.parent().map(Path::to_path_buf).unwrap_or_default();
        std::fs::create_dir_all(&paths.data_dir).map_err(|e| Error::io(&paths.data_dir, e))?;
        let readers_path = paths.readers();
        let readers: BTreeSet<String> = if readers_path.exists() {
            let text = std::fs::read_to_string(&readers_path).map_err(|e| Error::io(&readers_path, e))?;
            serde_json::from_str(&text)?
        } else {
            BTreeSet::new()
        };
        let responses = read_responses(&paths.responses())?;
        let mut log = Log::default();
        for r in responses {
            if !by_id.contains_key(&r.case_id) {
                return Err(Error::Validation(format!(
                    "response log refers to unknown case {}",
                    r.case_id
                )));
            }
            if !log.answered.insert((r.reader_id.clone(), r.case_id.clone())) {
                return Err(Error::Validation(format!(
                    "response log has two responses from {} for {}",
                    r.reader_id, r.case_id
                )));
            }
            log.responses.push(r);
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(paths.responses())
            .map_err(|e| Error::io(paths.responses(), e))?;
        Ok(ReaderStudy {
            paths,
            cases,
            by_id,
            case_root,
            readers: RwLock::new(readers),
            log: RwLock::new(log),
            writer: Mutex::new(writer),
            admin_token,
        })
    }

    pub fn paths(&self) -> &StudyPaths {
        &self.paths
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn case(&self, case_id: &str) -> Result<&Case> {
        self.by_id
            .get(case_id)
            .map(|&i| &self.cases[i])
            .ok_or_else(|| Error::NotFound(format!("unknown case {case_id}")))
    }

    pub fn readers(&self) -> Vec<String> {
        self.readers.read().expect("reader lock").iter().cloned().collect()
    }

    pub fn is_registered(&self, reader_id: &str) -> bool {
        self.readers.read().expect("reader lock").contains(reader_id)
    }

    fn require_reader(&self, reader_id: &str) -> Result<()> {
        if self.is_registered(reader_id) {
            Ok(())
        } else {
            Err(Error::NotFound(format!("unknown reader {reader_id}")))
        }
    }

    /// Adds a reader and rewrites `readers.json`. Returns false if the
    /// reader was already registered.
    pub fn register_reader(&self, reader_id: &str) -> Result<bool> {
        if reader_id.trim().is_empty() {
            return Err(Error::Validation("reader id must not be empty".into()));
        }
        let mut readers = self.readers.write().expect("reader lock");
        if !readers.insert(reader_id.to_string()) {
            return Ok(false);
        }
        let path = self.paths.readers();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&*readers)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(true)
    }

    /// Case ids in the order `reader_id` sees them.
    pub fn order_for(&self, reader_id: &str) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.cases.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed(reader_id)));
        idx.into_iter().map(|i| self.cases[i].case_id.as_str()).collect()
    }

    /// First case in the reader's order they have not answered, or `None`
    /// once every case is answered.
    pub fn next_case(&self, reader_id: &str, mode: ReadingMode) -> Result<Option<CaseView>> {
        self.require_reader(reader_id)?;
        let log = self.log.read().expect("log lock");
        let order = self.order_for(reader_id);
        let total = order.len();
        let Some((pos, id)) = order
            .into_iter()
            .enumerate()
            .find(|(_, id)| !log.answered.contains(&(reader_id.to_string(), id.to_string())))
        else {
            return Ok(None);
        };
        let case = self.case(id)?;
        let assisted = mode == ReadingMode::Assisted;
        Ok(Some(CaseView {
            case_id: case.case_id.clone(),
            sample_id: case.sample_id.clone(),
            mode,
            image_url: format!("/api/cases/{}/image", case.case_id),
            position: pos + 1,
            total,
            model_probabilities: assisted.then(|| {
                case.model_probabilities
                    .iter()
                    .zip(AnomalyLabel::ALL)
                    .map(|(&probability, label)| LabelScore { label, probability })
                    .collect()
            }),
            overlay_url: case
                .overlay
                .as_ref()
                .filter(|_| assisted)
                .map(|_| format!("/api/cases/{}/overlay", case.case_id)),
        }))
    }

    /// Appends a response. The duplicate check and the append happen under
    /// one lock, so concurrent duplicates cannot both succeed.
    pub fn submit(&self, response: ReaderResponse) -> Result<()> {
        self.case(&response.case_id)?;
        self.require_reader(&response.reader_id)?;
        let key = (response.reader_id.clone(), response.case_id.clone());
        let mut file = self.writer.lock().expect("writer lock");
        if self.log.read().expect("log lock").answered.contains(&key) {
            return Err(Error::Conflict(format!(
                "reader {} already answered case {}",
                response.reader_id, response.case_id
            )));
        }
        let mut line = serde_json::to_string(&response)?;
        line.push('\n');
        let path = self.paths.responses();
        file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        file.flush().map_err(|e| Error::io(&path, e))?;
        let mut log = self.log.write().expect("log lock");
        log.answered.insert(key);
        log.responses.push(response);
        Ok(())
    }

    pub fn responses(&self) -> Vec<ReaderResponse> {
        self.log.read().expect("log lock").responses.clone()
    }

    pub fn summary(&self) -> Result<StudySummary> {
        let readers = self.readers();
        let log = self.log.read().expect("log lock");
        summarize(&self.cases, readers.iter().map(String::as_str), &log.responses)
    }

    pub fn check_admin(&self, token: Option<&str>) -> Result<()> {
        match (&self.admin_token, token) {
            (None, _) => Err(Error::Config("summary is disabled: no admin token configured".into())),
            (Some(want), Some(got)) if want == got => Ok(()),
            _ => Err(Error::Validation("missing or wrong admin token".into())),
        }
    }

    pub fn image_path(&self, case_id: &str) -> Result<PathBuf> {
        Ok(self.resolve(&self.case(case_id)?.image))
    }

    pub fn overlay_path(&self, case_id: &str) -> Result<PathBuf> {
        let case = self.case(case_id)?;
        let overlay = case
            .overlay
            .as_ref()
            .ok_or_else(|| Error::NotFound(format!("case {case_id} has no overlay")))?;
        Ok(self.resolve(overlay))
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.case_root.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(dir: &Path, n: usize) -> ReaderStudy {
        let cases: Vec<Case> = (0..n)
            .map(|i| Case {
                case_id: format!("c{i:02}"),
                sample_id: format!("s{i}"),
                image: format!("img/{i}.png"),
                true_label: AnomalyLabel::ALL[i % 5],
                model_probabilities: vec![0.2; 5],
                overlay: (i % 2 == 0).then(|| format!("ov/{i}.png")),
            })
            .collect();
        write_cases(&dir.join("cases.jsonl"), &cases).unwrap();
        let s = ReaderStudy::open(
            StudyPaths {
                cases: dir.join("cases.jsonl"),
                data_dir: dir.join("data"),
            },
            Some("t".into()),
        )
        .unwrap();
        s.register_reader("A").unwrap();
        s.register_reader("B").unwrap();
        s
    }

    fn answer(s: &ReaderStudy, reader: &str, case: &str) -> Result<()> {
        s.submit(ReaderResponse {
            reader_id: reader.into(),
            case_id: case.into(),
            chosen_label: AnomalyLabel::Normal,
            mode: ReadingMode::Blind,
            elapsed_ms: 5,
            submitted_at: chrono::Utc::now(),
        })
    }

    #[test]
    fn orders_are_permutations_and_differ_by_reader() {
        let dir = tempfile::tempdir().unwrap();
        let s = study(dir.path(), 10);
        let (a, b) = (s.order_for("A"), s.order_for("B"));
        assert_eq!(a, s.order_for("A"));
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, s.cases().iter().map(|c| c.case_id.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn exhaustion_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let s = study(dir.path(), 6);
        let mut seen = BTreeSet::new();
        while let Some(v) = s.next_case("A", ReadingMode::Blind).unwrap() {
            assert!(v.model_probabilities.is_none() && v.overlay_url.is_none());
            assert!(seen.insert(v.case_id.clone()));
            answer(&s, "A", &v.case_id).unwrap();
        }
        assert_eq!(seen.len(), 6);
        assert!(matches!(answer(&s, "A", "c00"), Err(Error::Conflict(_))));
        assert!(matches!(answer(&s, "Z", "c00"), Err(Error::NotFound(_))));
        assert!(matches!(answer(&s, "A", "nope"), Err(Error::NotFound(_))));
        assert_eq!(read_responses(&s.paths().responses()).unwrap().len(), 6);
    }

    #[test]
    fn reopening_replays_the_log() {
        let dir = tempfile::tempdir().unwrap();
        let s = study(dir.path(), 4);
        answer(&s, "A", "c01").unwrap();
        answer(&s, "B", "c02").unwrap();
        let before = s.summary().unwrap();
        let paths = s.paths().clone();
        drop(s);
        let again = ReaderStudy::open(paths, None).unwrap();
        assert_eq!(again.summary().unwrap(), before);
        assert!(matches!(answer(&again, "A", "c01"), Err(Error::Conflict(_))));
        assert!(again.check_admin(Some("t")).is_err());
    }
}
