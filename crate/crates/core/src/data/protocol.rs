use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::manifest::{Column, Manifest, ManifestRow};

/// One predicate over a manifest column. All given conditions must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clause {
    pub column: Column,
    #[serde(rename = "in", default, skip_serializing_if = "Option::is_none")]
    pub one_of: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_in: Option<Vec<String>>,
    /// Numeric lower bound (inclusive); the column must parse as a number.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// The value must end with one of these.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ends_with: Option<Vec<String>>,
}

impl Clause {
    pub fn one_of(column: Column, values: &[&str]) -> Self {
        Self {
            column,
            one_of: Some(values.iter().map(|s| s.to_string()).collect()),
            not_in: None,
            min: None,
            max: None,
            ends_with: None,
        }
    }

    pub fn not_in(column: Column, values: &[&str]) -> Self {
        Self {
            one_of: None,
            not_in: Some(values.iter().map(|s| s.to_string()).collect()),
            ..Self::one_of(column, &[])
        }
    }

    pub fn matches(&self, row: &ManifestRow) -> bool {
        let v = row.column(self.column);
        if let Some(set) = &self.one_of {
            if !set.contains(&v) {
                return false;
            }
        }
        if let Some(set) = &self.not_in {
            if set.contains(&v) {
                return false;
            }
        }
        if self.min.is_some() || self.max.is_some() {
            let Ok(x) = v.trim().parse::<f64>() else {
                return false;
            };
            if self.min.is_some_and(|m| x < m) || self.max.is_some_and(|m| x > m) {
                return false;
            }
        }
        if let Some(suffixes) = &self.ends_with {
            if !suffixes.iter().any(|s| v.ends_with(s.as_str())) {
                return false;
            }
        }
        true
    }
}

fn matches_all(clauses: &[Clause], row: &ManifestRow) -> bool {
    clauses.iter().all(|c| c.matches(row))
}

/// Extra clauses that specialize the base splits for one fold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fold {
    pub name: String,
    #[serde(default)]
    pub train: Vec<Clause>,
    #[serde(default)]
    pub calib: Vec<Clause>,
    #[serde(default)]
    pub test: Vec<Clause>,
}

/// Train / calibration / test row filters, optionally repeated over folds.
/// Stored as TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub train: Vec<Clause>,
    /// Absent: the calibration split is the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib: Option<Vec<Clause>>,
    #[serde(default)]
    pub test: Vec<Clause>,
    #[serde(default, rename = "fold", skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<Fold>,
}

/// Which split supplies the scores the threshold is chosen on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibSource {
    Test,
    Calib,
}

impl std::str::FromStr for CalibSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(CalibSource::Test),
            "calib" => Ok(CalibSource::Calib),
            _ => Err(Error::invalid(format!("calibration split `{s}` is neither `test` nor `calib`"))),
        }
    }
}

/// Row indices of one fold's splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub fold: String,
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
    /// The threshold is fit on the test rows.
    pub calib_is_test: bool,
}

impl ProtocolSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| Error::Config(format!("protocol: {e}")))?;
        if p.name.is_empty() {
            return Err(Error::Config("protocol needs a name".into()));
        }
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("protocol serializes")
    }

    /// Fold names; a protocol without folds has the single fold `all`.
    pub fn fold_names(&self) -> Vec<String> {
        if self.folds.is_empty() {
            vec!["all".into()]
        } else {
            self.folds.iter().map(|f| f.name.clone()).collect()
        }
    }

    pub fn num_folds(&self) -> usize {
        self.folds.len().max(1)
    }

    /// Folds that hold out each value of `column` in turn: train on the
    /// others, test on the held-out one.
    pub fn leave_one_out(mut self, column: Column, values: &[&str]) -> Self {
        self.folds = values
            .iter()
            .map(|v| Fold {
                name: format!("{}-{v}", column_name(column)),
                train: vec![Clause::not_in(column, &[v])],
                calib: Vec::new(),
                test: vec![Clause::one_of(column, &[v])],
            })
            .collect();
        self
    }

    /// Applies fold `fold`'s filters and checks that train and test rows
    /// are disjoint and no split is empty.
    pub fn split(&self, manifest: &Manifest, fold: usize, calib: CalibSource) -> Result<Split> {
        let empty = Fold::default();
        let f = if self.folds.is_empty() {
            if fold != 0 {
                return Err(Error::invalid(format!("protocol `{}` has a single fold", self.name)));
            }
            &empty
        } else {
            self.folds.get(fold).ok_or_else(|| {
                Error::invalid(format!("fold {fold} out of range for protocol `{}` ({} folds)", self.name, self.folds.len()))
            })?
        };
        let select = |base: &[Clause], extra: &[Clause]| -> Vec<usize> {
            (0..manifest.len())
                .filter(|&i| matches_all(base, &manifest.rows[i]) && matches_all(extra, &manifest.rows[i]))
                .collect()
        };
        let train = select(&self.train, &f.train);
        let test = select(&self.test, &f.test);
        let name = self.fold_names()[fold].clone();
        for (what, rows) in [("train", &train), ("test", &test)] {
            if rows.is_empty() {
                return Err(Error::invalid(format!(
                    "protocol `{}` fold `{name}`: {what} split matches no rows",
                    self.name
                )));
            }
        }
        if let Some(i) = train.iter().find(|i| test.binary_search(i).is_ok()) {
            return Err(Error::contract(format!(
                "protocol `{}` fold `{name}`: row `{}` is in both train and test",
                self.name, manifest.rows[*i].path
            )));
        }
        let (calib_rows, calib_is_test) = match (calib, &self.calib) {
            (CalibSource::Calib, Some(base)) => {
                let rows = select(base, &f.calib);
                if rows.is_empty() {
                    return Err(Error::invalid(format!(
                        "protocol `{}` fold `{name}`: calib split matches no rows",
                        self.name
                    )));
                }
                (rows, false)
            }
            (CalibSource::Calib, None) => {
                return Err(Error::invalid(format!("protocol `{}` defines no calib split", self.name)));
            }
            (CalibSource::Test, _) => (test.clone(), true),
        };
        Ok(Split {
            fold: name,
            train,
            calib: calib_rows,
            test,
            calib_is_test,
        })
    }
}

fn column_name(c: Column) -> &'static str {
    match c {
        Column::Path => "path",
        Column::Label => "label",
        Column::AttackType => "attack_type",
        Column::SubjectId => "subject",
        Column::Session => "session",
        Column::Device => "device",
        Column::VideoId => "video",
        Column::FrameIndex => "frame",
    }
}

/// Protocol files shipped with the crate, by name.
pub const BUILTIN_PROTOCOLS: &[(&str, &str)] = &[
    ("synthetic", include_str!("../../protocols/synthetic.toml")),
    ("synthetic-folds", include_str!("../../protocols/synthetic-folds.toml")),
    ("oulu-p1", include_str!("../../protocols/oulu-p1.toml")),
    ("oulu-p2", include_str!("../../protocols/oulu-p2.toml")),
    ("oulu-p3", include_str!("../../protocols/oulu-p3.toml")),
    ("oulu-p4", include_str!("../../protocols/oulu-p4.toml")),
    ("siw-p1", include_str!("../../protocols/siw-p1.toml")),
    ("siw-p2", include_str!("../../protocols/siw-p2.toml")),
    ("siw-p3", include_str!("../../protocols/siw-p3.toml")),
];

pub fn builtin_protocol(name: &str) -> Result<ProtocolSpec> {
    BUILTIN_PROTOCOLS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ProtocolSpec::parse(text))
        .unwrap_or_else(|| Err(Error::invalid(format!("no built-in protocol `{name}`"))))
}

/// A built-in name or a path to a protocol file.
pub fn resolve_protocol(name_or_path: &str) -> Result<ProtocolSpec> {
    if BUILTIN_PROTOCOLS.iter().any(|(n, _)| *n == name_or_path) {
        builtin_protocol(name_or_path)
    } else {
        ProtocolSpec::read(Path::new(name_or_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{AttackType, Label};

    fn row(path: &str, subject: &str, device: &str, label: Label) -> ManifestRow {
        ManifestRow {
            path: path.into(),
            label,
            attack_type: if label == Label::Live {
                AttackType::None
            } else {
                AttackType::Print
            },
            subject_id: subject.into(),
            session: "1".into(),
            device: device.into(),
            video_id: path.into(),
            frame_index: 0,
        }
    }

    fn four_rows() -> Manifest {
        Manifest::new(
            "",
            vec![
                row("a", "1", "x", Label::Live),
                row("b", "1", "y", Label::Spoof),
                row("c", "2", "x", Label::Live),
                row("d", "2", "y", Label::Spoof),
            ],
        )
        .unwrap()
    }

    #[test]
    fn hand_built_split() {
        let p = ProtocolSpec {
            name: "t".into(),
            train: vec![Clause::one_of(Column::SubjectId, &["1"])],
            test: vec![Clause::one_of(Column::SubjectId, &["2"])],
            ..Default::default()
        };
        let s = p.split(&four_rows(), 0, CalibSource::Test).unwrap();
        assert_eq!(s.train, vec![0, 1]);
        assert_eq!(s.test, vec![2, 3]);
        assert_eq!(s.calib, s.test);
        assert!(s.calib_is_test);
        assert!(p.split(&four_rows(), 0, CalibSource::Calib).is_err());
    }

    #[test]
    fn overlap_and_empty_rejected() {
        let overlap = ProtocolSpec {
            name: "o".into(),
            train: vec![],
            test: vec![Clause::one_of(Column::Device, &["x"])],
            ..Default::default()
        };
        assert!(matches!(overlap.split(&four_rows(), 0, CalibSource::Test), Err(Error::Contract(_))));
        let empty = ProtocolSpec {
            name: "e".into(),
            test: vec![Clause::one_of(Column::Device, &["z"])],
            ..Default::default()
        };
        assert!(matches!(empty.split(&four_rows(), 0, CalibSource::Test), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn leave_one_device_out() {
        let devices = ["1", "2", "3", "4", "5", "6"];
        let rows = devices.iter().map(|d| row(&format!("r{d}"), "1", d, Label::Live)).collect();
        let m = Manifest::new("", rows).unwrap();
        let p = ProtocolSpec {
            name: "loo".into(),
            ..Default::default()
        }
        .leave_one_out(Column::Device, &devices);
        assert_eq!(p.num_folds(), 6);
        for k in 0..6 {
            let s = p.split(&m, k, CalibSource::Test).unwrap();
            assert_eq!(s.test, vec![k]);
            assert_eq!(s.train.len(), 5);
        }
    }

    #[test]
    fn numeric_and_suffix_clauses() {
        let r = row("Phone_1_3_05", "12", "x", Label::Live);
        let mut c = Clause::one_of(Column::SubjectId, &["12"]);
        c.one_of = None;
        c.min = Some(10.0);
        c.max = Some(20.0);
        assert!(c.matches(&r));
        c.max = Some(11.0);
        assert!(!c.matches(&r));
        let mut s = Clause::one_of(Column::Path, &[]);
        s.one_of = None;
        s.ends_with = Some(vec!["_05".into(), "_03".into()]);
        assert!(s.matches(&r));
    }

    #[test]
    fn builtin_protocols_parse_and_round_trip() {
        for (name, _) in BUILTIN_PROTOCOLS {
            let p = builtin_protocol(name).unwrap();
            assert_eq!(&p.name, name);
            assert_eq!(ProtocolSpec::parse(&p.to_toml()).unwrap(), p);
        }
        assert_eq!(builtin_protocol("oulu-p3").unwrap().num_folds(), 6);
        assert_eq!(builtin_protocol("oulu-p4").unwrap().num_folds(), 6);
    }
}
