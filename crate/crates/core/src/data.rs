//! Datasets: synthetic generators, CSV ingestion for mixed tabular data,
//! normalization/one-hot preprocessing and train/validation/test splits.

use std::fmt::Write as _;
use std::path::Path;

use crate::ndcore::{Rng, Vector};

/// One record of mixed data: continuous sub-vector plus categorical
/// sub-vector. Categories are 1-based (`1..=J_i` per dimension).
#[derive(Clone, Debug, PartialEq)]
pub struct MixedDatum {
    pub cont: Vector,
    pub cat: Vec<usize>,
}

impl MixedDatum {
    pub fn continuous(cont: Vector) -> Self {
        MixedDatum { cont, cat: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Role {
    Continuous,
    /// Categorical with the given cardinality J.
    Categorical(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

/// Per-continuous-column normalization statistics (train split only).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub columns: Vec<Column>,
    /// One entry per continuous column when normalization is enabled.
    pub normalization: Option<Vec<NormStat>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Schema {
    pub fn continuous(names: &[&str]) -> Self {
        Schema {
            columns: names
                .iter()
                .map(|n| Column {
                    name: n.to_string(),
                    role: Role::Continuous,
                })
                .collect(),
            normalization: None,
        }
    }

    pub fn cont_dim(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.role == Role::Continuous)
            .count()
    }

    pub fn cat_cards(&self) -> Vec<usize> {
        self.columns
            .iter()
            .filter_map(|c| match c.role {
                Role::Categorical(j) => Some(j),
                Role::Continuous => None,
            })
            .collect()
    }

    pub fn cat_dim(&self) -> usize {
        self.cat_cards().len()
    }

    /// Width of the one-hot network encoding: d_c + sum of cardinalities.
    pub fn input_dim(&self) -> usize {
        self.cont_dim() + self.cat_cards().iter().sum::<usize>()
    }

    /// Compute mean/std per continuous column from the given (training) data.
    /// Constant columns get std 1 so normalization stays invertible.
    pub fn fit_normalization(&mut self, train: &[MixedDatum]) {
        let d = self.cont_dim();
        let n = train.len().max(1) as f64;
        let mut stats = vec![NormStat { mean: 0.0, std: 1.0 }; d];
        for (i, s) in stats.iter_mut().enumerate() {
            let mean = train.iter().map(|x| x.cont[i]).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|x| (x.cont[i] - mean) * (x.cont[i] - mean))
                .sum::<f64>()
                / n;
            s.mean = mean;
            s.std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        self.normalization = Some(stats);
    }

    /// Apply normalization to the continuous part (identity when disabled).
    pub fn normalize(&self, datum: &MixedDatum) -> MixedDatum {
        match &self.normalization {
            None => datum.clone(),
            Some(stats) => MixedDatum {
                cont: datum
                    .cont
                    .iter()
                    .zip(stats)
                    .map(|(x, s)| (x - s.mean) / s.std)
                    .collect(),
                cat: datum.cat.clone(),
            },
        }
    }

    pub fn denormalize(&self, datum: &MixedDatum) -> MixedDatum {
        match &self.normalization {
            None => datum.clone(),
            Some(stats) => MixedDatum {
                cont: datum
                    .cont
                    .iter()
                    .zip(stats)
                    .map(|(x, s)| x * s.std + s.mean)
                    .collect(),
                cat: datum.cat.clone(),
            },
        }
    }

    fn check(&self, datum: &MixedDatum, line: usize) -> Result<(), DataError> {
        if datum.cont.len() != self.cont_dim() || datum.cat.len() != self.cat_dim() {
            return Err(DataError::Parse {
                line,
                msg: "column count mismatch".into(),
            });
        }
        for (d, (&cat, &card)) in datum.cat.iter().zip(&self.cat_cards()).enumerate() {
            if cat < 1 || cat > card {
                return Err(DataError::Schema(format!(
                    "line {line}: category {cat} out of 1..={card} in categorical dim {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Network input encoding: normalized continuous values followed by one
/// one-hot block per categorical dimension.
pub fn encode_for_network(datum: &MixedDatum, schema: &Schema) -> Vector {
    let norm = schema.normalize(datum);
    let mut out = Vec::with_capacity(schema.input_dim());
    out.extend(norm.cont.iter());
    for (&cat, &card) in norm.cat.iter().zip(&schema.cat_cards()) {
        for j in 1..=card {
            out.push(if j == cat { 1.0 } else { 0.0 });
        }
    }
    Vector::from_vec(out)
}

/// Inverse of [`encode_for_network`] for exact one-hot blocks (tests and
/// diagnostics; categorical block must contain a single 1).
pub fn decode_from_network(v: &Vector, schema: &Schema) -> MixedDatum {
    let d_c = schema.cont_dim();
    let mut cat = Vec::new();
    let mut off = d_c;
    for card in schema.cat_cards() {
        let block = &v.as_slice()[off..off + card];
        let j = block
            .iter()
            .position(|&x| x == 1.0)
            .expect("decode_from_network: no 1 in one-hot block");
        cat.push(j + 1);
        off += card;
    }
    let norm = MixedDatum {
        cont: Vector::from_slice(&v.as_slice()[..d_c]),
        cat,
    };
    schema.denormalize(&norm)
}

// ---------------------------------------------------------------------------
// Splits

/// Disjoint, covering train/validation/test index sets.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle split with explicit validation/test counts.
pub fn split_indices(n: usize, n_valid: usize, n_test: usize, rng: &mut Rng) -> Split {
    assert!(n_valid + n_test <= n, "split_indices: too few records");
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let test = idx.split_off(n - n_test);
    let valid = idx.split_off(n - n_test - n_valid);
    Split {
        train: idx,
        valid,
        test,
    }
}

// ---------------------------------------------------------------------------
// Synthetic generators

/// Points on the upper unit half circle with isotropic Gaussian noise:
/// angle uniform on (0, pi), point (cos, sin) + noise.
pub fn gen_half_circle(n: usize, noise_std: f64, rng: &mut Rng) -> Vec<Vector> {
    assert!(n >= 1 && noise_std >= 0.0);
    (0..n)
        .map(|_| {
            let theta = std::f64::consts::PI * rng.uniform();
            Vector::from_vec(vec![
                theta.cos() + noise_std * rng.std_normal(),
                theta.sin() + noise_std * rng.std_normal(),
            ])
        })
        .collect()
}

/// Angles where the three radial wedges attach to the arc.
pub const WEDGE_ANGLES: [f64; 3] = [
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
    3.0 * std::f64::consts::FRAC_PI_4,
];

/// Radial extent of each wedge beyond the unit arc.
pub const WEDGE_LENGTH: f64 = 0.4;

/// Half circle plus three radial wedges: `n_arc` arc points and
/// `n_per_wedge` points uniform along each radial segment
/// `r in [1, 1 + WEDGE_LENGTH]` at the wedge angles, all with noise.
pub fn gen_half_circle_wedges(
    n_arc: usize,
    n_per_wedge: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Vec<Vector> {
    let mut pts = if n_arc > 0 {
        gen_half_circle(n_arc, noise_std, rng)
    } else {
        Vec::new()
    };
    for &angle in &WEDGE_ANGLES {
        for _ in 0..n_per_wedge {
            let r = 1.0 + WEDGE_LENGTH * rng.uniform();
            pts.push(Vector::from_vec(vec![
                r * angle.cos() + noise_std * rng.std_normal(),
                r * angle.sin() + noise_std * rng.std_normal(),
            ]));
        }
    }
    pts
}

/// Shape of the mixed synthetic dataset: all dimensions are coupled through
/// one latent factor.
#[derive(Clone, Debug)]
pub struct MixedSynthSpec {
    pub d_c: usize,
    pub cards: Vec<usize>,
    /// Correlation of each dimension with the shared factor, in [0, 1].
    pub coupling: f64,
    /// Extra observation noise on continuous dims.
    pub noise_std: f64,
}

impl MixedSynthSpec {
    pub fn schema(&self) -> Schema {
        let mut columns: Vec<Column> = (0..self.d_c)
            .map(|i| Column {
                name: format!("c{i}"),
                role: Role::Continuous,
            })
            .collect();
        for (i, &j) in self.cards.iter().enumerate() {
            columns.push(Column {
                name: format!("s{i}"),
                role: Role::Categorical(j),
            });
        }
        Schema {
            columns,
            normalization: None,
        }
    }
}

/// Mixed records with known cross-type dependency: continuous dims are
/// linear-plus-noise in a shared standard-normal factor; categorical dims
/// threshold a noisy copy of the factor at equal-probability normal
/// quantiles.
pub fn gen_mixed_synthetic(n: usize, spec: &MixedSynthSpec, rng: &mut Rng) -> Vec<MixedDatum> {
    use crate::dist::std_normal_quantile;
    let rho = spec.coupling;
    assert!((0.0..=1.0).contains(&rho), "coupling must be in [0,1]");
    let idio = (1.0 - rho * rho).sqrt();
    // per-dim quantile thresholds for equal-probability bins
    let thresholds: Vec<Vec<f64>> = spec
        .cards
        .iter()
        .map(|&j| {
            (1..j)
                .map(|k| std_normal_quantile(k as f64 / j as f64))
                .collect()
        })
        .collect();
    (0..n)
        .map(|_| {
            let t = rng.std_normal();
            let cont: Vector = (0..spec.d_c)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (rho * t + idio * rng.std_normal()) + spec.noise_std * rng.std_normal()
                })
                .collect();
            let cat = thresholds
                .iter()
                .map(|th| {
                    let u = rho * t + idio * rng.std_normal();
                    th.iter().position(|&b| u < b).unwrap_or(th.len()) + 1
                })
                .collect();
            MixedDatum { cont, cat }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV

/// Parse the annotated header `name:role[:cardinality]` comma-separated.
pub fn parse_header(header: &str) -> Result<Schema, DataError> {
    let mut columns = Vec::new();
    for (i, field) in header.trim().split(',').enumerate() {
        let parts: Vec<&str> = field.trim().split(':').collect();
        let err = |msg: String| DataError::Parse { line: 1, msg };
        match parts.as_slice() {
            [name, "cont"] => columns.push(Column {
                name: name.to_string(),
                role: Role::Continuous,
            }),
            [name, "cat", card] => {
                let j: usize = card.parse().map_err(|_| {
                    err(format!("column {i}: bad cardinality '{card}'"))
                })?;
                if j < 2 {
                    return Err(err(format!("column {i}: cardinality must be >= 2")));
                }
                columns.push(Column {
                    name: name.to_string(),
                    role: Role::Categorical(j),
                });
            }
            _ => {
                return Err(err(format!(
                    "column {i}: expected 'name:cont' or 'name:cat:J', got '{field}'"
                )))
            }
        }
    }
    Ok(Schema {
        columns,
        normalization: None,
    })
}

fn is_missing(tok: &str) -> bool {
    tok.is_empty() || tok == "?" || tok.eq_ignore_ascii_case("na")
}

/// Load mixed data from a CSV file. The header carries the schema
/// (`name:role[:cardinality]`) unless one is supplied explicitly (in which
/// case the header row is still skipped). Rows with missing entries
/// (`""`, `?`, `NA`) are dropped.
pub fn load_csv(path: &Path, schema: Option<Schema>) -> Result<(Vec<MixedDatum>, Schema), DataError> {
    let text = std::fs::read_to_string(path)?;
    load_csv_str(&text, schema)
}

pub fn load_csv_str(
    text: &str,
    schema: Option<Schema>,
) -> Result<(Vec<MixedDatum>, Schema), DataError> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => {
            let schema = schema.ok_or_else(|| DataError::Schema("empty file, no schema".into()))?;
            return Ok((Vec::new(), schema));
        }
    };
    let schema = match schema {
        Some(s) => s,
        None => parse_header(header)?,
    };
    let mut data = Vec::new();
    'rows: for (lineno, line) in lines {
        let line_display = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(',').map(str::trim).collect();
        if toks.len() != schema.columns.len() {
            return Err(DataError::Parse {
                line: line_display,
                msg: format!(
                    "expected {} fields, found {}",
                    schema.columns.len(),
                    toks.len()
                ),
            });
        }
        let mut cont = Vec::new();
        let mut cat = Vec::new();
        for (tok, col) in toks.iter().zip(&schema.columns) {
            if is_missing(tok) {
                continue 'rows; // drop rows with missing entries
            }
            match col.role {
                Role::Continuous => cont.push(tok.parse::<f64>().map_err(|_| DataError::Parse {
                    line: line_display,
                    msg: format!("bad number '{tok}' in column '{}'", col.name),
                })?),
                Role::Categorical(j) => {
                    let c: usize = tok.parse().map_err(|_| DataError::Parse {
                        line: line_display,
                        msg: format!("bad category '{tok}' in column '{}'", col.name),
                    })?;
                    if c < 1 || c > j {
                        return Err(DataError::Schema(format!(
                            "line {line_display}: category {c} out of 1..={j} in column '{}'",
                            col.name
                        )));
                    }
                    cat.push(c);
                }
            }
        }
        let datum = MixedDatum {
            cont: Vector::from_vec(cont),
            cat,
        };
        schema.check(&datum, line_display)?;
        data.push(datum);
    }
    Ok((data, schema))
}

/// Render the annotated header for a schema.
pub fn format_header(schema: &Schema) -> String {
    schema
        .columns
        .iter()
        .map(|c| match c.role {
            Role::Continuous => format!("{}:cont", c.name),
            Role::Categorical(j) => format!("{}:cat:{j}", c.name),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialize records under a schema, header included.
pub fn format_csv(data: &[MixedDatum], schema: &Schema) -> String {
    let mut out = format_header(schema);
    out.push('\n');
    for datum in data {
        let mut ci = datum.cont.iter();
        let mut si = datum.cat.iter();
        let mut first = true;
        for col in &schema.columns {
            if !first {
                out.push(',');
            }
            first = false;
            match col.role {
                Role::Continuous => {
                    let _ = write!(out, "{}", ci.next().unwrap());
                }
                Role::Categorical(_) => {
                    let _ = write!(out, "{}", si.next().unwrap());
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::kendall_tau_empirical;

    #[test]
    fn half_circle_on_arc_without_noise() {
        let mut rng = Rng::new(1);
        let pts = gen_half_circle(280, 0.0, &mut rng);
        assert_eq!(pts.len(), 280);
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            assert!(p[1] >= 0.0);
        }
    }

    #[test]
    fn half_circle_reproducible() {
        let a = gen_half_circle(50, 0.02, &mut Rng::new(7));
        let b = gen_half_circle(50, 0.02, &mut Rng::new(7));
        assert_eq!(a, b);
    }

    #[test]
    fn wedges_reduce_to_arc_and_extend_beyond_noise_band() {
        let a = gen_half_circle_wedges(40, 0, 0.02, &mut Rng::new(3));
        let b = gen_half_circle(40, 0.02, &mut Rng::new(3));
        assert_eq!(a, b);

        let noise = 0.02;
        let pts = gen_half_circle_wedges(280, 100, noise, &mut Rng::new(4));
        assert_eq!(pts.len(), 280 + 300);
        let max_r = pts
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .fold(0.0_f64, f64::max);
        assert!(max_r > 1.0 + 4.0 * noise, "wedges should leave the arc band");
        assert!(max_r <= 1.0 + WEDGE_LENGTH + 6.0 * noise);
    }

    fn synth_spec(coupling: f64) -> MixedSynthSpec {
        MixedSynthSpec {
            d_c: 4,
            cards: vec![2, 3, 4],
            coupling,
            noise_std: 0.1,
        }
    }

    #[test]
    fn mixed_synth_zero_coupling_independent() {
        let spec = synth_spec(0.0);
        let data = gen_mixed_synthetic(30_000, &spec, &mut Rng::new(5));
        let xs: Vec<f64> = data.iter().map(|d| d.cont[0]).collect();
        let ys: Vec<f64> = data.iter().map(|d| d.cont[1]).collect();
        let zs: Vec<f64> = data.iter().map(|d| d.cat[1] as f64).collect();
        assert!(kendall_tau_empirical(&xs, &ys).abs() < 0.02);
        assert!(kendall_tau_empirical(&xs, &zs).abs() < 0.02);
    }

    #[test]
    fn mixed_synth_strong_coupling_dependent() {
        let spec = synth_spec(0.9);
        let data = gen_mixed_synthetic(20_000, &spec, &mut Rng::new(6));
        let xs: Vec<f64> = data.iter().map(|d| d.cont[0]).collect();
        let ys: Vec<f64> = data.iter().map(|d| d.cont[2]).collect();
        let tau = kendall_tau_empirical(&xs, &ys);
        assert!(tau.abs() > 0.3, "tau {tau}");
        // alternating signs: dim 1 is anti-coupled to dim 0
        let ys: Vec<f64> = data.iter().map(|d| d.cont[1]).collect();
        assert!(kendall_tau_empirical(&xs, &ys) < -0.3);
    }

    #[test]
    fn mixed_synth_roundtrips_through_csv() {
        let spec = synth_spec(0.8);
        let data = gen_mixed_synthetic(50, &spec, &mut Rng::new(7));
        let schema = spec.schema();
        let text = format_csv(&data, &schema);
        let (back, schema2) = load_csv_str(&text, None).unwrap();
        assert_eq!(schema.columns, schema2.columns);
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.cat, b.cat);
            for (x, y) in a.cont.iter().zip(b.cont.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_missing_rows_dropped_and_errors_carry_line_numbers() {
        let text = "x:cont,k:cat:3\n1.5,2\n?,1\n2.5,3\n,2\n3.5,1\n";
        let (data, _) = load_csv_str(text, None).unwrap();
        assert_eq!(data.len(), 3);

        let bad = "x:cont,k:cat:3\n1.0,2\noops,1\n";
        match load_csv_str(bad, None) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let bad_cat = "x:cont,k:cat:3\n1.0,7\n";
        assert!(matches!(load_csv_str(bad_cat, None), Err(DataError::Schema(_))));
    }

    #[test]
    fn csv_empty_file() {
        let (data, _) = load_csv_str("x:cont\n", None).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn normalization_roundtrip_identity() {
        let mut schema = Schema::continuous(&["a", "b"]);
        let data: Vec<MixedDatum> = (0..100)
            .map(|i| {
                MixedDatum::continuous(Vector::from_vec(vec![
                    3.0 + i as f64,
                    -2.0 * i as f64 + 0.5,
                ]))
            })
            .collect();
        schema.fit_normalization(&data);
        for d in &data {
            let back = schema.denormalize(&schema.normalize(d));
            for (x, y) in d.cont.iter().zip(back.cont.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // normalized stats are ~ (0, 1)
        let norm: Vec<MixedDatum> = data.iter().map(|d| schema.normalize(d)).collect();
        let mean: f64 = norm.iter().map(|d| d.cont[0]).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn one_hot_encoding() {
        let schema = Schema {
            columns: vec![
                Column { name: "x".into(), role: Role::Continuous },
                Column { name: "k".into(), role: Role::Categorical(3) },
            ],
            normalization: None,
        };
        let d = MixedDatum {
            cont: Vector::from_vec(vec![0.25]),
            cat: vec![2],
        };
        let v = encode_for_network(&d, &schema);
        assert_eq!(v.as_slice(), &[0.25, 0.0, 1.0, 0.0]);
        let blocks: f64 = v.as_slice()[1..].iter().sum();
        assert!((blocks - 1.0).abs() < 1e-15);
        assert_eq!(decode_from_network(&v, &schema), d);

        let pure = Schema::continuous(&["a", "b"]);
        let d2 = MixedDatum::continuous(Vector::from_vec(vec![1.0, 2.0]));
        assert_eq!(encode_for_network(&d2, &pure).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn splits_disjoint_covering_reproducible() {
        let s1 = split_indices(400, 60, 60, &mut Rng::new(11));
        let s2 = split_indices(400, 60, 60, &mut Rng::new(11));
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.valid, s2.valid);
        assert_eq!(s1.test, s2.test);
        assert_eq!(s1.train.len(), 280);
        assert_eq!(s1.valid.len(), 60);
        assert_eq!(s1.test.len(), 60);
        let mut seen = vec![false; 400];
        for &i in s1.train.iter().chain(&s1.valid).chain(&s1.test) {
            assert!(!seen[i], "index {i} appears twice");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }
}
