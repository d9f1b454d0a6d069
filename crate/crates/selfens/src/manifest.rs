//! Dataset catalog and labeled/unlabeled/test splitting under a label
//! budget. Manifest files are plain CSV with header `path,label,subject`;
//! an empty label field marks an unlabeled record. An optional
//! `# classes: a,b,...` line before the header pins the class table (and
//! its order); otherwise classes are inferred from the sorted distinct
//! labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub label: Option<usize>,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the record paths are relative to.
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn image_path(&self, idx: usize) -> PathBuf {
        self.root.join(&self.records[idx].path)
    }
}

/// Parse a manifest and verify that every referenced image file exists
/// and decodes.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let manifest = parse_manifest(path)?;
    for (i, r) in manifest.records.iter().enumerate() {
        let img = manifest.image_path(i);
        crate::imageio::load_image(&img)
            .map_err(|e| Error::Data(format!("{}: record {}: {e}", path.display(), i + 1)))?;
        let _ = r;
    }
    Ok(manifest)
}

/// Parse without touching the image files.
pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut classes: Option<Vec<String>> = None;
    let mut rows: Vec<(usize, String, String, String)> = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(cls) = rest.trim().strip_prefix("classes:") {
                classes = Some(cls.split(',').map(|c| c.trim().to_string()).collect());
            }
            continue;
        }
        if !saw_header {
            if line != "path,label,subject" {
                return Err(Error::Data(format!(
                    "{}: line {}: expected header 'path,label,subject', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!(
                "{}: line {}: expected 3 comma-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        rows.push((
            lineno + 1,
            fields[0].trim().to_string(),
            fields[1].trim().to_string(),
            fields[2].trim().to_string(),
        ));
    }
    if rows.is_empty() {
        eprintln!("warning: {}: empty manifest", path.display());
    }

    let classes = match classes {
        Some(c) => c,
        None => {
            let set: BTreeSet<String> =
                rows.iter().filter(|r| !r.2.is_empty()).map(|r| r.2.clone()).collect();
            set.into_iter().collect()
        }
    };
    let class_index: BTreeMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (lineno, p, label, subject) in rows {
        if !seen.insert(p.clone()) {
            return Err(Error::Data(format!(
                "{}: line {lineno}: duplicate path '{p}'",
                path.display()
            )));
        }
        let label = if label.is_empty() {
            None
        } else {
            Some(*class_index.get(label.as_str()).ok_or_else(|| {
                Error::Data(format!(
                    "{}: line {lineno}: unknown label '{label}' (classes: {})",
                    path.display(),
                    classes.join(",")
                ))
            })?)
        };
        let subject = if subject.is_empty() { None } else { Some(subject) };
        records.push(Record { path: p, label, subject });
    }
    Ok(Manifest { root, classes, records })
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# classes: {}\n", manifest.classes.join(",")));
    out.push_str("path,label,subject\n");
    for r in &manifest.records {
        let label = r.label.map(|l| manifest.classes[l].clone()).unwrap_or_default();
        let subject = r.subject.clone().unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.path, label, subject));
    }
    fs::write(path, out).map_err(Error::io(path))
}

/// Index sets for one experiment: a labeled set of exactly `budget`
/// records, the remaining training records as the unlabeled set, and a
/// subject-disjoint test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
    pub budget: usize,
    pub seed: u64,
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.3;

/// Deterministic split: subject-grouped 70/30 train/test, then a labeled
/// subset of `budget` records drawn from the train side (class-balanced to
/// within one when `stratify`), with everything else in the train side
/// becoming the unlabeled set.
pub fn make_split(
    manifest: &Manifest,
    budget: usize,
    seed: u64,
    stratify: bool,
) -> Result<SplitPlan> {
    make_split_with_fraction(manifest, budget, seed, stratify, DEFAULT_TEST_FRACTION)
}

pub fn make_split_with_fraction(
    manifest: &Manifest,
    budget: usize,
    seed: u64,
    stratify: bool,
    test_fraction: f64,
) -> Result<SplitPlan> {
    if manifest.records.is_empty() {
        return Err(Error::Data("make_split: empty manifest".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // group records by subject so no subject straddles train and test
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let key = match &r.subject {
            Some(s) => format!("s:{s}"),
            None => format!("r:{i}"),
        };
        groups.entry(key).or_default().push(i);
    }
    let mut group_list: Vec<Vec<usize>> = groups.into_values().collect();
    group_list.shuffle(&mut rng);

    let want_test = (manifest.records.len() as f64 * test_fraction).round() as usize;
    let mut test = Vec::new();
    let mut train = Vec::new();
    for g in group_list {
        if test.len() < want_test {
            test.extend(g);
        } else {
            train.extend(g);
        }
    }
    train.sort_unstable();
    test.sort_unstable();

    // labeled subset from the train side
    let labeled_capable: Vec<usize> =
        train.iter().copied().filter(|&i| manifest.records[i].label.is_some()).collect();
    if budget > labeled_capable.len() {
        return Err(Error::Data(format!(
            "make_split: budget {budget} exceeds the {} labeled-capable training records",
            labeled_capable.len()
        )));
    }

    let labeled: Vec<usize> = if stratify {
        let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &labeled_capable {
            per_class.entry(manifest.records[i].label.unwrap()).or_default().push(i);
        }
        let mut pools: Vec<Vec<usize>> = per_class.into_values().collect();
        for pool in pools.iter_mut() {
            pool.shuffle(&mut rng);
        }
        // round-robin keeps class counts within one of each other
        let mut picked = Vec::with_capacity(budget);
        let mut k = 0;
        while picked.len() < budget {
            let before = picked.len();
            for pool in pools.iter() {
                if picked.len() < budget {
                    if let Some(&i) = pool.get(k) {
                        picked.push(i);
                    }
                }
            }
            if picked.len() == before {
                return Err(Error::Data(format!(
                    "make_split: cannot stratify budget {budget} over the available class pools"
                )));
            }
            k += 1;
        }
        picked
    } else {
        let mut pool = labeled_capable.clone();
        pool.shuffle(&mut rng);
        pool.truncate(budget);
        pool
    };
    let labeled_set: BTreeSet<usize> = labeled.iter().copied().collect();
    let unlabeled: Vec<usize> = train.iter().copied().filter(|i| !labeled_set.contains(i)).collect();

    let mut labeled = labeled;
    labeled.sort_unstable();
    Ok(SplitPlan { labeled, unlabeled, test, budget, seed })
}

pub fn save_plan(path: &Path, manifest: &Manifest, plan: &SplitPlan) -> Result<()> {
    let mut out = String::new();
    out.push_str("# selfens split plan v1\n");
    out.push_str(&format!("# budget: {}\n# seed: {}\n", plan.budget, plan.seed));
    for (role, ids) in
        [("labeled", &plan.labeled), ("unlabeled", &plan.unlabeled), ("test", &plan.test)]
    {
        for &i in ids {
            out.push_str(&format!("{role},{}\n", manifest.records[i].path));
        }
    }
    fs::write(path, out).map_err(Error::io(path))
}

pub fn load_plan(path: &Path, manifest: &Manifest) -> Result<SplitPlan> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let index: BTreeMap<&str, usize> =
        manifest.records.iter().enumerate().map(|(i, r)| (r.path.as_str(), i)).collect();
    let mut plan = SplitPlan { labeled: vec![], unlabeled: vec![], test: vec![], budget: 0, seed: 0 };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("budget:") {
                plan.budget = v.trim().parse().map_err(|_| {
                    Error::Data(format!("{}: line {}: bad budget", path.display(), lineno + 1))
                })?;
            } else if let Some(v) = rest.strip_prefix("seed:") {
                plan.seed = v.trim().parse().map_err(|_| {
                    Error::Data(format!("{}: line {}: bad seed", path.display(), lineno + 1))
                })?;
            }
            continue;
        }
        let (role, p) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("{}: line {}: expected 'role,path'", path.display(), lineno + 1))
        })?;
        let idx = *index.get(p).ok_or_else(|| {
            Error::Data(format!(
                "{}: line {}: path '{p}' not in manifest",
                path.display(),
                lineno + 1
            ))
        })?;
        match role {
            "labeled" => plan.labeled.push(idx),
            "unlabeled" => plan.unlabeled.push(idx),
            "test" => plan.test.push(idx),
            other => {
                return Err(Error::Data(format!(
                    "{}: line {}: unknown role '{other}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_manifest(n: usize, subjects: bool) -> Manifest {
        Manifest {
            root: PathBuf::from("."),
            classes: vec!["a".into(), "b".into()],
            records: (0..n)
                .map(|i| Record {
                    path: format!("img{i}.pgm"),
                    label: Some(i % 2),
                    subject: subjects.then(|| format!("subj{}", i / 4)),
                })
                .collect(),
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let m = synthetic_manifest(100, true);
        let a = make_split(&m, 20, 7, true).unwrap();
        let b = make_split(&m, 20, 7, true).unwrap();
        assert_eq!(a, b);
        let c = make_split(&m, 20, 8, true).unwrap();
        assert_ne!(a, c);
        let l: BTreeSet<_> = a.labeled.iter().collect();
        let u: BTreeSet<_> = a.unlabeled.iter().collect();
        let t: BTreeSet<_> = a.test.iter().collect();
        assert!(l.is_disjoint(&u) && l.is_disjoint(&t) && u.is_disjoint(&t));
        assert_eq!(a.labeled.len() + a.unlabeled.len() + a.test.len(), 100);
    }

    #[test]
    fn stratified_budget_is_class_balanced() {
        let m = synthetic_manifest(200, false);
        let plan = make_split(&m, 20, 3, true).unwrap();
        let counts = plan.labeled.iter().fold([0usize; 2], |mut acc, &i| {
            acc[m.records[i].label.unwrap()] += 1;
            acc
        });
        assert_eq!(counts, [10, 10]);
    }

    #[test]
    fn subjects_never_straddle_train_and_test() {
        let m = synthetic_manifest(120, true);
        let plan = make_split(&m, 30, 11, true).unwrap();
        let test_subjects: BTreeSet<_> =
            plan.test.iter().map(|&i| m.records[i].subject.clone().unwrap()).collect();
        for &i in plan.labeled.iter().chain(&plan.unlabeled) {
            assert!(!test_subjects.contains(m.records[i].subject.as_ref().unwrap()));
        }
    }

    #[test]
    fn full_budget_empties_unlabeled() {
        let m = synthetic_manifest(40, false);
        let plan = make_split(&m, 0, 1, false).unwrap();
        assert!(plan.labeled.is_empty());
        // budget == all train-side records -> no unlabeled left
        let train_count = 40 - plan.test.len();
        let full = make_split(&m, train_count, 1, false).unwrap();
        assert!(full.unlabeled.is_empty());
        assert_eq!(full.labeled.len(), train_count);
    }

    #[test]
    fn over_budget_rejected() {
        let m = synthetic_manifest(10, false);
        assert!(make_split(&m, 11, 0, false).is_err());
    }

    #[test]
    fn manifest_parse_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "# classes: male,female\npath,label,subject\na.pgm,male,s1\nb.pgm,,s1\nc.pgm,female,s2\n",
        )
        .unwrap();
        let m = parse_manifest(&p).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.classes, vec!["male", "female"]);
        assert_eq!(m.records[1].label, None);

        fs::write(&p, "# classes: male,female\npath,label,subject\na.pgm,malee,s1\n").unwrap();
        let err = parse_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("malee"), "{err}");

        fs::write(&p, "path,label,subject\na.pgm,x,s1\na.pgm,x,s2\n").unwrap();
        let err = parse_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate path"), "{err}");

        fs::write(&p, "").unwrap();
        assert_eq!(parse_manifest(&p).unwrap().records.len(), 0);
    }

    #[test]
    fn plan_round_trip() {
        let m = synthetic_manifest(30, true);
        let plan = make_split(&m, 6, 5, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.csv");
        save_plan(&p, &m, &plan).unwrap();
        assert_eq!(load_plan(&p, &m).unwrap(), plan);
    }
}
