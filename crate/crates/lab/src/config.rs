//! Flat `section.key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Vectors are comma
//! lists, matrices are `;`-separated rows of comma lists. Polynomials are
//! `;`-separated monomials `coeff:p0,p1,...` (powers per coordinate), and a
//! polynomial map is a `|`-separated list of polynomials. Sign patterns are
//! comma lists over `+`, `-`, `0` and `*` (free).

use std::collections::BTreeMap;
use std::fmt;

use saddlescape_core::functions::{Monomial, Polynomial, SelectionRule, Sign};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    Syntax { line: usize, text: String },
    UnknownKey { line: usize, key: String },
    DuplicateKey { line: usize, key: String },
    TypeError { line: usize, key: String, expected: &'static str, found: String },
    RangeError { line: usize, key: String, message: String },
    Missing { key: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { line, text } => write!(f, "line {line}: expected `key = value`, got `{text}`"),
            ConfigError::UnknownKey { line, key } => write!(f, "line {line}: unknown key `{key}`"),
            ConfigError::DuplicateKey { line, key } => write!(f, "line {line}: duplicate key `{key}`"),
            ConfigError::TypeError { line, key, expected, found } => {
                write!(f, "line {line}: `{key}` expects {expected}, got `{found}`")
            }
            ConfigError::RangeError { line, key, message } => write!(f, "line {line}: `{key}` {message}"),
            ConfigError::Missing { key } => write!(f, "missing required key `{key}`"),
        }
    }
}

/// Every problem found in one config text.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Word,
    Vector,
    Matrix,
    Terms,
    Graph,
    Signs,
}

impl Kind {
    fn describe(self) -> &'static str {
        match self {
            Kind::Float => "a number",
            Kind::Int => "a non-negative integer",
            Kind::Word => "a word",
            Kind::Vector => "a comma-separated list of numbers",
            Kind::Matrix => "`;`-separated rows of numbers",
            Kind::Terms => "`;`-separated monomials `coeff:p0,p1,...`",
            Kind::Graph => "`|`-separated polynomials",
            Kind::Signs => "a comma list of +, -, 0, *",
        }
    }
}

const KEYS: &[(&str, Kind)] = &[
    ("function.name", Kind::Word),
    ("function.a", Kind::Vector),
    ("function.b", Kind::Vector),
    ("function.dim", Kind::Int),
    ("function.representative", Kind::Terms),
    ("manifold.kind", Kind::Word),
    ("manifold.base", Kind::Vector),
    ("manifold.basis", Kind::Matrix),
    ("manifold.validity_radius", Kind::Float),
    ("point.x_star", Kind::Vector),
    ("point.x0", Kind::Vector),
    ("schedule.c", Kind::Float),
    ("schedule.alpha", Kind::Float),
    ("noise.kind", Kind::Word),
    ("noise.sigma", Kind::Float),
    ("noise.bound", Kind::Float),
    ("noise.restrict", Kind::Matrix),
    ("sgd.rule", Kind::Word),
    ("sgd.horizon", Kind::Int),
    ("sgd.radius", Kind::Float),
    ("run.seed", Kind::Int),
    ("run.runs", Kind::Int),
    ("run.out", Kind::Word),
    ("conditions.radius", Kind::Float),
    ("conditions.samples", Kind::Int),
    ("conditions.tol", Kind::Float),
    ("conditions.rho_grid", Kind::Vector),
    ("conditions.segments", Kind::Int),
    ("drift.beta", Kind::Float),
    ("drift.c", Kind::Float),
    ("drift.n_mc", Kind::Int),
    ("drift.offsets", Kind::Vector),
    ("drift.gammas", Kind::Vector),
    ("drift.normal", Kind::Vector),
    ("rates.a", Kind::Float),
    ("rates.checkpoints", Kind::Vector),
    ("rates.tail_grid", Kind::Vector),
    ("centerstable.j", Kind::Matrix),
    ("centerstable.j_plus", Kind::Matrix),
    ("centerstable.j_minus", Kind::Matrix),
    ("centerstable.g", Kind::Graph),
    ("centerstable.delta_scale", Kind::Float),
    ("centerstable.delta_cap", Kind::Float),
    ("centerstable.noise", Kind::Word),
    ("centerstable.sigma", Kind::Float),
    ("centerstable.rho", Kind::Word),
    ("centerstable.rho_scale", Kind::Float),
    ("centerstable.rho_tilde", Kind::Word),
    ("centerstable.rho_tilde_scale", Kind::Float),
    ("centerstable.y0", Kind::Vector),
    ("centerstable.l", Kind::Float),
    ("centerstable.n_start", Kind::Int),
    ("centerstable.epsilon", Kind::Float),
    ("centerstable.horizon", Kind::Int),
    ("centerstable.csv_runs", Kind::Int),
];

fn key_kind(key: &str) -> Option<Kind> {
    if let Some((_, k)) = KEYS.iter().find(|(name, _)| *name == key) {
        return Some(*k);
    }
    let rest = key.strip_prefix("function.piece.")?;
    let (index, field) = rest.split_once('.')?;
    index.parse::<usize>().ok()?;
    match field {
        "signs" => Some(Kind::Signs),
        "terms" => Some(Kind::Terms),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Word(String),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
    Terms(Vec<Monomial>),
    Graph(Vec<Vec<Monomial>>),
    Signs(Vec<Option<Sign>>),
}

fn parse_float(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_vector(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(parse_float).collect()
}

fn parse_matrix(s: &str) -> Option<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_vector).collect::<Option<_>>()?;
    let width = rows.first()?.len();
    rows.iter().all(|r| r.len() == width).then_some(rows)
}

fn parse_terms(s: &str) -> Option<Vec<Monomial>> {
    if s.trim() == "0" {
        return Some(Vec::new());
    }
    s.split(';')
        .map(|term| {
            let (coeff, powers) = term.split_once(':')?;
            Some(Monomial::new(parse_float(coeff)?, &parse_vector(powers)?))
        })
        .collect()
}

fn parse_signs(s: &str) -> Option<Vec<Option<Sign>>> {
    s.split(',')
        .map(|t| match t.trim() {
            "+" => Some(Some(Sign::Positive)),
            "-" => Some(Some(Sign::Negative)),
            "0" => Some(Some(Sign::Zero)),
            "*" => Some(None),
            _ => None,
        })
        .collect()
}

fn parse_value(kind: Kind, raw: &str) -> Option<Value> {
    match kind {
        Kind::Float => parse_float(raw).map(Value::Float),
        Kind::Int => raw.trim().parse::<u64>().ok().map(Value::Int),
        Kind::Word => {
            let w = raw.trim();
            (!w.is_empty() && !w.contains(char::is_whitespace)).then(|| Value::Word(w.to_string()))
        }
        Kind::Vector => parse_vector(raw).map(Value::Vector),
        Kind::Matrix => parse_matrix(raw).map(Value::Matrix),
        Kind::Terms => parse_terms(raw).map(Value::Terms),
        Kind::Graph => raw.split('|').map(parse_terms).collect::<Option<_>>().map(Value::Graph),
        Kind::Signs => parse_signs(raw).map(Value::Signs),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CustomPiece {
    pub signs: Vec<Option<Sign>>,
    pub terms: Vec<Monomial>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FunctionSpec {
    Builtin { name: String, a: Vec<f64>, b: Vec<f64> },
    Custom { dim: usize, pieces: Vec<CustomPiece>, representative: Option<Vec<Monomial>> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldSpec {
    /// The function's own annotation.
    Builtin,
    Affine { base: Vec<f64>, basis: Vec<Vec<f64>> },
    Circle { validity_radius: f64 },
    Full,
    Point { base: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Zero,
    Sphere,
    Rademacher,
    TruncGaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub bound: f64,
    /// Basis vectors of the subspace the noise is confined to.
    pub restrict: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionsSpec {
    pub radius: f64,
    pub samples: usize,
    pub tol: f64,
    pub rho_grid: Vec<f64>,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftSpec {
    pub beta: f64,
    /// Defaults to `10(σ² + 1)`.
    pub c: Option<f64>,
    pub n_mc: usize,
    pub offsets: Vec<f64>,
    pub gammas: Vec<f64>,
    pub normal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatesSpec {
    pub a: f64,
    pub checkpoints: Vec<usize>,
    pub tail_grid: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    Zero,
    Decaying,
    Persistent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterStableSpec {
    pub j: Option<Vec<Vec<f64>>>,
    pub j_plus: Option<Vec<Vec<f64>>>,
    pub j_minus: Option<Vec<Vec<f64>>>,
    pub g: Option<Vec<Vec<Monomial>>>,
    pub delta_scale: f64,
    pub delta_cap: f64,
    /// Confine the martingale input to the stable-block coordinates.
    pub restricted: bool,
    pub sigma: f64,
    pub rho: ResidualKind,
    pub rho_scale: f64,
    pub rho_tilde: ResidualKind,
    pub rho_tilde_scale: f64,
    pub y0: Option<Vec<f64>>,
    pub l: f64,
    pub n_start: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub csv_runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    entries: Vec<(String, String)>,
    pub function: FunctionSpec,
    pub manifold: ManifoldSpec,
    pub x_star: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub c: f64,
    pub alpha: f64,
    pub noise: NoiseSpec,
    pub rule: SelectionRule,
    pub horizon: usize,
    pub radius: f64,
    pub seed: u64,
    pub runs: usize,
    pub out: Option<String>,
    pub conditions: ConditionsSpec,
    pub drift: DriftSpec,
    pub rates: RatesSpec,
    pub centerstable: CenterStableSpec,
}

struct Reader {
    values: BTreeMap<String, (usize, Value)>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn line(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(l, _)| *l)
    }

    fn range(&mut self, key: &str, message: impl Into<String>) {
        let line = self.line(key);
        self.errors.push(ConfigError::RangeError { line, key: key.to_string(), message: message.into() });
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key).map(|(_, v)| v)
    }

    fn float(&self, key: &str, default: f64) -> f64 {
        match self.get(key) {
            Some(Value::Float(v)) => *v,
            _ => default,
        }
    }

    fn opt_float(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            Some(Value::Float(v)) => Some(*v),
            _ => None,
        }
    }

    fn int(&self, key: &str, default: u64) -> u64 {
        match self.get(key) {
            Some(Value::Int(v)) => *v,
            _ => default,
        }
    }

    fn word(&self, key: &str, default: &str) -> String {
        match self.get(key) {
            Some(Value::Word(v)) => v.clone(),
            _ => default.to_string(),
        }
    }

    fn vector(&self, key: &str) -> Option<Vec<f64>> {
        match self.get(key) {
            Some(Value::Vector(v)) => Some(v.clone()),
            _ => None,
        }
    }

    fn matrix(&self, key: &str) -> Option<Vec<Vec<f64>>> {
        match self.get(key) {
            Some(Value::Matrix(v)) => Some(v.clone()),
            _ => None,
        }
    }

    fn terms(&self, key: &str) -> Option<Vec<Monomial>> {
        match self.get(key) {
            Some(Value::Terms(v)) => Some(v.clone()),
            _ => None,
        }
    }

    fn indices(&mut self, key: &str, default: &[usize]) -> Vec<usize> {
        match self.vector(key) {
            None => default.to_vec(),
            Some(v) => {
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                    self.range(key, "must list positive integers");
                }
                v.iter().map(|x| *x as usize).collect()
            }
        }
    }

    fn positive(&mut self, key: &str, value: f64) {
        if value.is_nan() || value <= 0.0 {
            self.range(key, "must be positive");
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, default: &str, options: &[(&str, T)]) -> T {
        let w = self.word(key, default);
        match options.iter().find(|(name, _)| *name == w) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.range(key, format!("must be one of {}", names.join(", ")));
                options[0].1
            }
        }
    }
}

/// Parses a config text, reporting every error found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut entries = Vec::new();
    let mut reader = Reader { values: BTreeMap::new(), errors: Vec::new() };
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            reader.errors.push(ConfigError::Syntax { line, text: trimmed.to_string() });
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(kind) = key_kind(&key) else {
            reader.errors.push(ConfigError::UnknownKey { line, key });
            continue;
        };
        if reader.values.contains_key(&key) {
            reader.errors.push(ConfigError::DuplicateKey { line, key });
            continue;
        }
        match parse_value(kind, &value) {
            Some(v) => {
                reader.values.insert(key.clone(), (line, v));
            }
            None => {
                reader.errors.push(ConfigError::TypeError {
                    line,
                    key: key.clone(),
                    expected: kind.describe(),
                    found: value.clone(),
                });
            }
        }
        entries.push((key, value));
    }
    let cfg = build(&mut reader, entries);
    if reader.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(reader.errors))
    }
}

fn function_spec(r: &mut Reader) -> FunctionSpec {
    let name = r.word("function.name", "saddle_abs");
    if name != "custom" {
        return FunctionSpec::Builtin {
            name,
            a: r.vector("function.a").unwrap_or_default(),
            b: r.vector("function.b").unwrap_or_default(),
        };
    }
    let dim = r.int("function.dim", 0) as usize;
    if dim == 0 {
        if r.get("function.dim").is_some() {
            r.range("function.dim", "must be at least 1");
        } else {
            r.errors.push(ConfigError::Missing { key: "function.dim".into() });
        }
    }
    let mut indices: Vec<usize> = r
        .values
        .keys()
        .filter_map(|k| k.strip_prefix("function.piece.")?.split_once('.')?.0.parse().ok())
        .collect();
    indices.sort_unstable();
    indices.dedup();
    let mut pieces = Vec::new();
    for k in indices {
        let signs_key = format!("function.piece.{k}.signs");
        let terms_key = format!("function.piece.{k}.terms");
        let signs = match r.get(&signs_key) {
            Some(Value::Signs(s)) => s.clone(),
            Some(_) => continue,
            None => vec![None; dim],
        };
        let Some(terms) = r.terms(&terms_key) else {
            if r.get(&terms_key).is_none() {
                r.errors.push(ConfigError::Missing { key: terms_key });
            }
            continue;
        };
        if signs.len() != dim {
            r.range(&signs_key, format!("must have {dim} entries"));
        }
        if terms.iter().any(|m| m.factors.iter().any(|(i, _)| *i >= dim)) {
            r.range(&terms_key, format!("uses more than {dim} coordinates"));
        }
        pieces.push(CustomPiece { signs, terms });
    }
    if pieces.is_empty() && dim > 0 {
        r.errors.push(ConfigError::Missing { key: "function.piece.0.terms".into() });
    }
    FunctionSpec::Custom { dim, pieces, representative: r.terms("function.representative") }
}

fn manifold_spec(r: &mut Reader) -> ManifoldSpec {
    let kind = r.word("manifold.kind", "builtin");
    match kind.as_str() {
        "builtin" => ManifoldSpec::Builtin,
        "affine" => {
            let base = r.vector("manifold.base");
            let basis = r.matrix("manifold.basis");
            if base.is_none() {
                r.errors.push(ConfigError::Missing { key: "manifold.base".into() });
            }
            if basis.is_none() {
                r.errors.push(ConfigError::Missing { key: "manifold.basis".into() });
            }
            let (base, basis) = (base.unwrap_or_default(), basis.unwrap_or_default());
            if basis.iter().any(|b| b.len() != base.len()) {
                r.range("manifold.basis", "rows must match the dimension of manifold.base");
            }
            ManifoldSpec::Affine { base, basis }
        }
        "circle" => {
            let v = r.float("manifold.validity_radius", 0.5);
            r.positive("manifold.validity_radius", v);
            ManifoldSpec::Circle { validity_radius: v }
        }
        "full" => ManifoldSpec::Full,
        "point" => match r.vector("manifold.base") {
            Some(base) => ManifoldSpec::Point { base },
            None => {
                r.errors.push(ConfigError::Missing { key: "manifold.base".into() });
                ManifoldSpec::Full
            }
        },
        _ => {
            r.range("manifold.kind", "must be one of builtin, affine, circle, full, point");
            ManifoldSpec::Builtin
        }
    }
}

fn residual_kind(r: &mut Reader, key: &str) -> ResidualKind {
    r.choice(
        key,
        "zero",
        &[("zero", ResidualKind::Zero), ("decaying", ResidualKind::Decaying), ("persistent", ResidualKind::Persistent)],
    )
}

fn build(r: &mut Reader, entries: Vec<(String, String)>) -> ExperimentConfig {
    let function = function_spec(r);
    let manifold = manifold_spec(r);

    let c = r.float("schedule.c", 0.05);
    r.positive("schedule.c", c);
    let alpha = r.float("schedule.alpha", 0.7);
    if !(alpha > 0.5 && alpha <= 1.0) {
        r.range(
            "schedule.alpha",
            format!("= {alpha} is outside (0.5, 1]; the steps must satisfy Σγ_n = ∞ and Σγ_n² < ∞"),
        );
    }

    let kind = r.choice(
        "noise.kind",
        "sphere",
        &[
            ("sphere", NoiseKind::Sphere),
            ("zero", NoiseKind::Zero),
            ("rademacher", NoiseKind::Rademacher),
            ("trunc_gaussian", NoiseKind::TruncGaussian),
        ],
    );
    let sigma = r.float("noise.sigma", 0.5);
    if kind != NoiseKind::Zero {
        r.positive("noise.sigma", sigma);
    }
    let bound = r.float("noise.bound", 1.0);
    r.positive("noise.bound", bound);
    let noise = NoiseSpec { kind, sigma, bound, restrict: r.matrix("noise.restrict") };

    let rule = r.choice(
        "sgd.rule",
        "min_norm",
        &[
            ("min_norm", SelectionRule::MinNorm),
            ("active_piece", SelectionRule::ActivePiece),
            ("random_vertex", SelectionRule::RandomVertex),
        ],
    );
    let horizon = r.int("sgd.horizon", 100_000) as usize;
    let radius = r.float("sgd.radius", 0.5);
    r.positive("sgd.radius", radius);
    let runs = r.int("run.runs", 200) as usize;
    if runs == 0 {
        r.range("run.runs", "must be at least 1");
    }
    let out = match r.get("run.out") {
        Some(Value::Word(w)) => Some(w.clone()),
        _ => None,
    };

    let conditions = ConditionsSpec {
        radius: r.float("conditions.radius", 0.1),
        samples: r.int("conditions.samples", 10_000) as usize,
        tol: r.float("conditions.tol", 1e-6),
        rho_grid: r.vector("conditions.rho_grid").unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
        segments: r.int("conditions.segments", 2000) as usize,
    };
    r.positive("conditions.radius", conditions.radius);
    r.positive("conditions.tol", conditions.tol);
    if conditions.rho_grid.windows(2).any(|w| w[0] >= w[1]) {
        r.range("conditions.rho_grid", "must be strictly increasing");
    }

    let drift = DriftSpec {
        beta: r.float("drift.beta", 1.0),
        c: r.opt_float("drift.c"),
        n_mc: r.int("drift.n_mc", 10_000) as usize,
        offsets: r.vector("drift.offsets").unwrap_or_else(|| (1..=10).map(|k| 0.01 * k as f64).collect()),
        gammas: r.vector("drift.gammas").unwrap_or_else(|| vec![1e-2, 1e-3]),
        normal: r.vector("drift.normal"),
    };
    r.positive("drift.beta", drift.beta);
    if drift.n_mc == 0 {
        r.range("drift.n_mc", "must be at least 1");
    }

    let rates = RatesSpec {
        a: r.float("rates.a", 0.2),
        checkpoints: r.indices("rates.checkpoints", &[1000, 100_000]),
        tail_grid: r.indices("rates.tail_grid", &[1000, 10_000, 50_000]),
    };

    let restricted = r.choice("centerstable.noise", "omni", &[("omni", false), ("restricted", true)]);
    let centerstable = CenterStableSpec {
        j: r.matrix("centerstable.j"),
        j_plus: r.matrix("centerstable.j_plus"),
        j_minus: r.matrix("centerstable.j_minus"),
        g: match r.get("centerstable.g") {
            Some(Value::Graph(g)) => Some(g.clone()),
            _ => None,
        },
        delta_scale: r.float("centerstable.delta_scale", 0.0),
        delta_cap: r.float("centerstable.delta_cap", 1.0),
        restricted,
        sigma: r.float("centerstable.sigma", 0.5),
        rho: residual_kind(r, "centerstable.rho"),
        rho_scale: r.float("centerstable.rho_scale", 0.1),
        rho_tilde: residual_kind(r, "centerstable.rho_tilde"),
        rho_tilde_scale: r.float("centerstable.rho_tilde_scale", 0.1),
        y0: r.vector("centerstable.y0"),
        l: r.float("centerstable.l", 0.01),
        n_start: r.int("centerstable.n_start", 10) as usize,
        epsilon: r.float("centerstable.epsilon", 0.1),
        horizon: r.int("centerstable.horizon", 10_000) as usize,
        csv_runs: r.int("centerstable.csv_runs", 1) as usize,
    };
    r.positive("centerstable.sigma", centerstable.sigma);
    r.positive("centerstable.l", centerstable.l);
    r.positive("centerstable.epsilon", centerstable.epsilon);
    if centerstable.j.is_some() && (centerstable.j_plus.is_some() || centerstable.j_minus.is_some()) {
        r.range("centerstable.j", "cannot be combined with centerstable.j_plus / j_minus");
    }

    ExperimentConfig {
        entries,
        function,
        manifold,
        x_star: r.vector("point.x_star"),
        x0: r.vector("point.x0"),
        c,
        alpha,
        noise,
        rule,
        horizon,
        radius,
        seed: r.int("run.seed", 0),
        runs,
        out,
        conditions,
        drift,
        rates,
        centerstable,
    }
}

impl ExperimentConfig {
    /// Canonical text: one `key = value` line per entry in input order,
    /// values verbatim.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Entries that can change results: everything except `run.out`.
    pub fn experiment_entries(&self) -> impl Iterator<Item = &(String, String)> {
        self.entries.iter().filter(|(k, _)| k != "run.out")
    }

    /// Hex SHA-256 of the `key = value` lines of
    /// [`ExperimentConfig::experiment_entries`].
    pub fn sha256(&self) -> String {
        let text: String = self.experiment_entries().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces or appends `key` and revalidates.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigErrors> {
        let mut entries = self.entries.clone();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
        let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        parse_config(&text)
    }
}

/// Builds a polynomial on `R^dim` from parsed monomials.
pub fn polynomial(dim: usize, terms: &[Monomial]) -> Polynomial {
    Polynomial { dim, terms: terms.to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_alpha() {
        let cfg = parse_config("schedule.alpha = 0.7\n").unwrap();
        assert_eq!(cfg.alpha, 0.7);
    }

    #[test]
    fn rejects_small_alpha() {
        let err = parse_config("schedule.alpha = 0.4").unwrap_err();
        assert!(matches!(&err.0[0], ConfigError::RangeError { key, .. } if key == "schedule.alpha"));
        assert!(err.to_string().contains("(0.5, 1]"));
    }

    #[test]
    fn collects_every_error() {
        let text = "schedule.alpha = 2\nbogus.key = 1\nsgd.horizon = -3\nnoise.kind = pink\nnot a line\n";
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.0.len(), 5, "{err}");
    }

    #[test]
    fn parses_structured_values() {
        let text = "function.name = custom\nfunction.dim = 2\nfunction.piece.0.signs = *,+\n\
                    function.piece.0.terms = -1:2,0;1:0,1\nfunction.piece.1.signs = *,-\n\
                    function.piece.1.terms = -1:2,0;-1:0,1\nmanifold.kind = affine\nmanifold.base = 0,0\n\
                    manifold.basis = 1,0\ncenterstable.g = 0.1:2|0\n";
        let cfg = parse_config(text).unwrap();
        match &cfg.function {
            FunctionSpec::Custom { dim, pieces, .. } => {
                assert_eq!(*dim, 2);
                assert_eq!(pieces.len(), 2);
                assert_eq!(pieces[1].signs, vec![None, Some(Sign::Negative)]);
                assert_eq!(pieces[0].terms.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.centerstable.g.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn echoes_and_overrides() {
        let text = "function.name = saddle_abs\npoint.x0 = 0, 0.3\nrun.seed = 4\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.to_text(), "function.name = saddle_abs\npoint.x0 = 0, 0.3\nrun.seed = 4\n");
        let again = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        let o = cfg.with_override("run.seed", "9").unwrap();
        assert_eq!(o.seed, 9);
        assert_ne!(o.sha256(), cfg.sha256());
        assert_eq!(cfg.sha256().len(), 64);
        assert_eq!(cfg.with_override("run.out", "elsewhere").unwrap().sha256(), cfg.sha256());
    }
}
