//! Loading networks, vectors, initial data and distributions from the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use crn_core::{catalog, parse_network, GridFunction, Lattice, ReactionNetwork};

/// A network named on the command line, plus the file it came from.
pub struct LoadedNetwork {
    pub net: ReactionNetwork,
    pub source: Option<PathBuf>,
}

/// Accepts a catalog name (`birth_death`, `ab`, ...) or a path to a network file.
pub fn load_network(spec: &str) -> anyhow::Result<LoadedNetwork> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let net = parse_network(&text).with_context(|| format!("in {}", path.display()))?;
        return Ok(LoadedNetwork { net, source: Some(path.to_path_buf()) });
    }
    match catalog::by_name(spec) {
        Some(net) => Ok(LoadedNetwork { net, source: None }),
        None => bail!("`{spec}` is neither a network file nor a catalog name (birth_death, ab, dimerization, schlogl)"),
    }
}

/// Parses `1.5,2` into a vector of the expected length.
pub fn parse_vector(text: &str, len: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    let v = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("{what}: `{s}`: {e}")))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    if v.len() != len {
        bail!("{what} has {} components, the network has {len} species", v.len());
    }
    Ok(v)
}

/// A scalar expression in the species coordinates.
///
/// Variables are the species names, `x0, x1, ...`, and `x` for the first
/// coordinate. The usual functions (`exp`, `ln`, `sqrt`, `max`, ...) are
/// available.
pub struct Expression {
    expr: meval::Expr,
    names: Vec<String>,
}

impl Expression {
    pub fn parse(text: &str, species: &[String]) -> anyhow::Result<Self> {
        let expr: meval::Expr = text.parse().map_err(|e| anyhow!("expression `{text}`: {e}"))?;
        let mut names: Vec<String> = species.to_vec();
        names.extend((0..species.len()).map(|i| format!("x{i}")));
        let this = Expression { expr, names };
        // Surface unknown variables now rather than on the first evaluation.
        this.try_eval(&vec![1.0; species.len()])?;
        Ok(this)
    }

    fn try_eval(&self, x: &[f64]) -> anyhow::Result<f64> {
        let mut ctx = meval::Context::new();
        let n = x.len();
        for (i, name) in self.names.iter().enumerate() {
            ctx.var(name.as_str(), x[i % n]);
        }
        if let Some(&first) = x.first() {
            ctx.var("x", first);
        }
        self.expr.eval_with_context(ctx).map_err(|e| anyhow!("{e}"))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.try_eval(x).unwrap_or(f64::NAN)
    }
}

/// The position with the largest coordinates in the box.
fn far_corner(lat: &Lattice) -> Vec<f64> {
    lat.bounds().iter().map(|&b| b as f64 * lat.h()).collect()
}

/// Initial data on a lattice: an expression or a CSV written by `crn hje`.
///
/// The far-field value defaults to the value at the far corner of the box.
pub fn load_grid_data(spec: &str, species: &[String], lat: &Lattice, far_field: Option<f64>) -> anyhow::Result<GridFunction> {
    let path = Path::new(spec);
    let g = if path.is_file() {
        let values = read_lattice_column(path, lat, "u")?;
        let far = far_field.unwrap_or(*values.last().expect("lattice is nonempty"));
        GridFunction::new(lat.clone(), values, far)?
    } else {
        let expr = Expression::parse(spec, species)?;
        let far = far_field.unwrap_or_else(|| expr.eval(&far_corner(lat)));
        GridFunction::from_fn(lat, far, |x| expr.eval(x))
    };
    if g.has_nan() {
        bail!("initial data `{spec}` is not finite on the lattice");
    }
    Ok(g)
}

/// `delta:x0` or a CSV with a `probability` column written by `crn cme`.
pub fn load_distribution(spec: &str, n_species: usize, lat: &Lattice) -> anyhow::Result<GridFunction> {
    if let Some(point) = spec.strip_prefix("delta:") {
        let x0 = parse_vector(point, n_species, "p0")?;
        return Ok(GridFunction::delta(lat, &x0)?);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        bail!("p0 must be `delta:x1,x2,...` or a CSV file, got `{spec}`");
    }
    let values = read_lattice_column(path, lat, "probability")?;
    Ok(GridFunction::new(lat.clone(), values, 0.0)?)
}

/// Reads `column` from a CSV keyed by the `index` column, checking that it
/// covers the lattice.
fn read_lattice_column(path: &Path, lat: &Lattice, column: &str) -> anyhow::Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: no `{name}` column", path.display()))
    };
    let (ic, vc) = (find("index")?, find(column)?);
    let mut values = vec![f64::NAN; lat.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let i: usize = record[ic].parse().with_context(|| format!("{} row {}", path.display(), line + 2))?;
        let v: f64 = record[vc].parse().with_context(|| format!("{} row {}", path.display(), line + 2))?;
        if i >= lat.len() {
            bail!("{}: index {i} outside a lattice of {} states", path.display(), lat.len());
        }
        values[i] = v;
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        bail!("{}: no value for lattice index {i}", path.display());
    }
    Ok(values)
}
