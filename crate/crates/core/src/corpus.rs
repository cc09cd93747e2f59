//! Problem collections, control texts, and head assignment.
//!
//! A collection lives under `<root>/<problem_id>/*.txt` with an optional
//! `<root>/collection.json` manifest of `[{problem_id, language, genre}]`
//! (PAN's `info.json`, keyed by `folder`, is read too).
//! Texts shared between problems are stored once and get a single head.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{self, Alphabet, EncodedDoc, NormalizedText, Normalizer};

pub const DEFAULT_MAX_PROBLEM_DOCS: usize = 100;
pub const MANIFEST_FILE: &str = "collection.json";
/// Manifest name used by the PAN distributions, read when
/// [`MANIFEST_FILE`] is absent.
pub const PAN_MANIFEST_FILE: &str = "info.json";
/// PAN releases keep answers beside the problems; never a problem itself.
pub const TRUTH_DIR: &str = "truth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Problem,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub raw: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub language: String,
    pub genre: String,
    /// Collection-wide document ids, parallel to `filenames`.
    pub doc_ids: Vec<String>,
    /// File names as they appear inside this problem's directory.
    pub filenames: Vec<String>,
}

impl Problem {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn filename_of(&self, doc_id: &str) -> Option<&str> {
        self.doc_ids
            .iter()
            .position(|d| d == doc_id)
            .map(|i| self.filenames[i].as_str())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    #[serde(alias = "folder")]
    problem_id: String,
    language: String,
    genre: String,
}

fn txt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    String::from_utf8(bytes).map_err(|_| Error::NonUtf8File(path.to_path_buf()))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every problem under `root`. Problems without a manifest entry get
/// `default_language` and genre `unknown`.
pub fn load_collection(root: &Path, default_language: &str) -> Result<(Vec<Problem>, Vec<Document>)> {
    load_collection_with_limit(root, default_language, DEFAULT_MAX_PROBLEM_DOCS)
}

pub fn load_collection_with_limit(
    root: &Path,
    default_language: &str,
    max_docs: usize,
) -> Result<(Vec<Problem>, Vec<Document>)> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let manifest: HashMap<String, ManifestEntry> = {
        let path = [MANIFEST_FILE, PAN_MANIFEST_FILE]
            .iter()
            .map(|name| root.join(name))
            .find(|p| p.is_file());
        if let Some(path) = path {
            let entries: Vec<ManifestEntry> = serde_json::from_str(&read_utf8(&path)?)?;
            entries.into_iter().map(|e| (e.problem_id.clone(), e)).collect()
        } else {
            HashMap::new()
        }
    };

    let mut problem_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && !p.ends_with(TRUTH_DIR))
        .collect();
    problem_dirs.sort();

    let mut problems = Vec::new();
    let mut documents: Vec<Document> = Vec::new();
    let mut by_content: HashMap<String, String> = HashMap::new();

    for dir in problem_dirs {
        let problem_id = file_name(&dir);
        let files = txt_files(&dir)?;
        if files.is_empty() {
            return Err(Error::EmptyProblem(dir));
        }
        if files.len() > max_docs {
            return Err(Error::InvalidParameter(format!(
                "problem {problem_id} has {} documents, limit is {max_docs}",
                files.len()
            )));
        }
        let (language, genre) = match manifest.get(&problem_id) {
            Some(e) => (e.language.clone(), e.genre.clone()),
            None => (default_language.to_owned(), "unknown".to_owned()),
        };
        let mut doc_ids = Vec::with_capacity(files.len());
        let mut filenames = Vec::with_capacity(files.len());
        for path in files {
            let raw = read_utf8(&path)?;
            let name = file_name(&path);
            let doc_id = by_content
                .entry(raw.clone())
                .or_insert_with(|| {
                    let id = format!("{problem_id}/{name}");
                    documents.push(Document {
                        doc_id: id.clone(),
                        raw,
                        role: Role::Problem,
                    });
                    id
                })
                .clone();
            doc_ids.push(doc_id);
            filenames.push(name);
        }
        problems.push(Problem {
            problem_id,
            language,
            genre,
            doc_ids,
            filenames,
        });
    }
    Ok((problems, documents))
}

/// Draws `n` control texts from `dir`, the same ones for the same seed.
pub fn load_controls(dir: &Path, n: usize, seed: u64) -> Result<Vec<Document>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let files = txt_files(dir)?;
    if files.len() < n {
        return Err(Error::InsufficientControls {
            requested: n,
            available: files.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, files.len(), n).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let path = &files[i];
            Ok(Document {
                doc_id: format!("control/{}", file_name(path)),
                raw: read_utf8(path)?,
                role: Role::Control,
            })
        })
        .collect()
}

/// Documents in head order: problem documents in (problem, filename)
/// order, then controls.
pub fn head_order<'a>(
    problems: &[Problem],
    problem_docs: &'a [Document],
    controls: &'a [Document],
) -> Result<Vec<&'a Document>> {
    let by_id: HashMap<&str, &Document> =
        problem_docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut seen = BTreeSet::new();
    let mut ordered = Vec::with_capacity(problem_docs.len() + controls.len());
    for p in problems {
        for id in &p.doc_ids {
            let doc = by_id.get(id.as_str()).ok_or_else(|| Error::UnknownDocument(id.clone()))?;
            if seen.insert(id.as_str()) {
                ordered.push(*doc);
            }
        }
    }
    ordered.extend(controls.iter());
    Ok(ordered)
}

/// Normalizes documents in head order.
pub fn normalize_documents(docs: &[&Document], normalizer: &Normalizer) -> Vec<NormalizedText> {
    docs.iter().map(|d| normalizer.normalize(&d.doc_id, &d.raw)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    /// `documents[h]` is the text of head `h`.
    pub documents: Vec<EncodedDoc>,
    pub head_of: BTreeMap<String, usize>,
    pub controls: BTreeSet<usize>,
    pub problems: Vec<Problem>,
}

impl TrainingSet {
    pub fn n_heads(&self) -> usize {
        self.documents.len()
    }

    pub fn head(&self, doc_id: &str) -> Result<usize> {
        self.head_of
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_owned()))
    }
}

/// Normalizes, optionally masks rare words (document frequencies counted
/// over problem and control texts together), and encodes every document.
pub fn assemble(
    problems: &[Problem],
    problem_docs: &[Document],
    controls: &[Document],
    normalizer: &Normalizer,
    alphabet: &Alphabet,
    df_threshold: Option<f64>,
    reversed: bool,
) -> Result<TrainingSet> {
    let ordered = head_order(problems, problem_docs, controls)?;
    let mut texts = normalize_documents(&ordered, normalizer);
    if let Some(threshold) = df_threshold {
        let table = textprep::doc_frequency(&texts);
        texts = texts
            .iter()
            .map(|t| textprep::mask_rare_words(t, &table, threshold))
            .collect::<Result<_>>()?;
    }
    let documents: Vec<EncodedDoc> = texts
        .iter()
        .map(|t| textprep::encode(t, alphabet, reversed))
        .collect();
    let head_of = ordered
        .iter()
        .enumerate()
        .map(|(h, d)| (d.doc_id.clone(), h))
        .collect();
    let controls = ordered
        .iter()
        .enumerate()
        .filter(|(_, d)| d.role == Role::Control)
        .map(|(h, _)| h)
        .collect();
    Ok(TrainingSet {
        documents,
        head_of,
        controls,
        problems: problems.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::{build_alphabet, EquivalenceConfig, RARE_WORD};

    fn write(dir: &Path, name: &str, content: &[u8]) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join(name), content).unwrap();
    }

    fn sample_collection() -> tempfile::TempDir {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        write(&root.join("problem001"), "a.txt", b"The cat sat on the mat.");
        write(&root.join("problem001"), "b.txt", b"Shared text by someone.");
        write(&root.join("problem002"), "c.txt", b"Shared text by someone.");
        write(&root.join("problem002"), "d.txt", b"Another document here.");
        fs::write(
            root.join(MANIFEST_FILE),
            r#"[{"problem_id":"problem001","language":"en","genre":"articles"}]"#,
        )
        .unwrap();
        tmp
    }

    #[test]
    fn pan_manifest_and_truth_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        write(&root.join("problem001"), "a.txt", b"Greek text");
        write(&root.join(TRUTH_DIR).join("problem001"), "clustering.json", b"[]");
        fs::write(
            root.join(PAN_MANIFEST_FILE),
            r#"[{"folder":"problem001","language":"gr","genre":"reviews"}]"#,
        )
        .unwrap();
        let (problems, _) = load_collection(root, "en").unwrap();
        assert_eq!(problems.len(), 1);
        assert_eq!((problems[0].language.as_str(), problems[0].genre.as_str()), ("gr", "reviews"));
    }

    #[test]
    fn shared_documents_stored_once() {
        let tmp = sample_collection();
        let (problems, docs) = load_collection(tmp.path(), "nl").unwrap();
        assert_eq!(problems.len(), 2);
        assert_eq!(docs.len(), 3);
        assert_eq!(problems[0].doc_ids[1], "problem001/b.txt");
        assert_eq!(problems[1].doc_ids[0], "problem001/b.txt");
        assert_eq!(problems[1].filenames[0], "c.txt");
        assert_eq!(problems[0].genre, "articles");
        assert_eq!(problems[1].language, "nl");
        let total: usize = problems.iter().map(Problem::len).sum();
        assert!(total >= docs.len());
    }

    #[test]
    fn load_errors() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_collection(&tmp.path().join("nope"), "en"),
            Err(Error::MissingDirectory(_))
        ));
        fs::create_dir_all(tmp.path().join("empty")).unwrap();
        assert!(matches!(load_collection(tmp.path(), "en"), Err(Error::EmptyProblem(_))));

        let tmp = tempfile::tempdir().unwrap();
        write(&tmp.path().join("p"), "bad.txt", &[0xff, 0xfe, 0x41]);
        assert!(matches!(load_collection(tmp.path(), "en"), Err(Error::NonUtf8File(_))));
    }

    #[test]
    fn controls_are_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        for i in 0..100 {
            write(tmp.path(), &format!("c{i:03}.txt"), format!("text {i}").as_bytes());
        }
        let a = load_controls(tmp.path(), 80, 7).unwrap();
        let b = load_controls(tmp.path(), 80, 7).unwrap();
        assert_eq!(a.len(), 80);
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d.role == Role::Control));
        assert!(load_controls(tmp.path(), 0, 7).unwrap().is_empty());
        assert!(matches!(
            load_controls(tmp.path(), 101, 7),
            Err(Error::InsufficientControls { requested: 101, available: 100 })
        ));
    }

    #[test]
    fn assemble_orders_heads() {
        let tmp = sample_collection();
        let (problems, docs) = load_collection(tmp.path(), "en").unwrap();
        let controls = vec![Document {
            doc_id: "control/x.txt".into(),
            raw: "A control text, quite unusual.".into(),
            role: Role::Control,
        }];
        let norm = Normalizer::new("en", &EquivalenceConfig::default());
        let ordered = head_order(&problems, &docs, &controls).unwrap();
        let texts = normalize_documents(&ordered, &norm);
        let alphabet = build_alphabet(&texts, 1e-4, "en").unwrap().with_token(RARE_WORD);

        let set = assemble(&problems, &docs, &controls, &norm, &alphabet, None, false).unwrap();
        assert_eq!(set.n_heads(), 4);
        assert_eq!(set.head("problem001/a.txt").unwrap(), 0);
        assert_eq!(set.head("problem002/d.txt").unwrap(), 2);
        assert_eq!(set.controls, BTreeSet::from([3]));
        let rare = alphabet.id(RARE_WORD).unwrap();
        assert!(set.documents.iter().all(|d| !d.symbols.contains(&rare)));

        let masked = assemble(&problems, &docs, &controls, &norm, &alphabet, Some(0.3), true).unwrap();
        assert!(masked.documents.iter().all(|d| d.reversed));
        assert!(masked.documents.iter().any(|d| d.symbols.contains(&rare)));
        // heads are a bijection onto 0..M
        let heads: BTreeSet<usize> = masked.head_of.values().copied().collect();
        assert_eq!(heads, (0..4).collect());
    }
}
