//! Strict TOML configuration.
//!
//! A file may name a `preset`; its own keys are then merged over the
//! preset's expanded configuration. Tables that select a variant (a kernel
//! `family`, a profile `kind`, a `march` method) and the `mesh` table are
//! replaced as a whole rather than merged, so switching variants never
//! leaves stray keys behind.
//!
//! Validation walks the merged document against a schema first, so every
//! unknown key, missing key and type error is reported at once, and then
//! checks value ranges.

use crossdiff::experiments::preset;
use crossdiff::SimulationConfig;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Command line overrides, applied after the preset merge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub eps: Option<f64>,
    pub nu: Option<f64>,
    pub cells: Option<usize>,
    pub t_final: Option<f64>,
    pub dt_report: Option<f64>,
    pub integrator: Option<String>,
}

#[derive(Clone, Copy)]
enum Kind {
    Number,
    Integer,
    Bool,
    Str,
    OneOf(&'static [&'static str]),
    Numbers,
    Table(&'static [Field]),
    Tagged {
        tag: &'static str,
        variants: &'static [(&'static str, &'static [Field])],
    },
}

#[derive(Clone, Copy)]
struct Field {
    key: &'static str,
    required: bool,
    kind: Kind,
}

const fn req(key: &'static str, kind: Kind) -> Field {
    Field { key, required: true, kind }
}

const fn opt(key: &'static str, kind: Kind) -> Field {
    Field { key, required: false, kind }
}

const KERNEL: Kind = Kind::Tagged {
    tag: "family",
    variants: &[
        ("zero", &[]),
        (
            "gaussian",
            &[req("amplitude", Kind::Number), req("exponent", Kind::Number), req("scale", Kind::Number)],
        ),
        ("quadratic", &[]),
        ("absolute", &[req("sign", Kind::Integer)]),
        ("tabulated", &[req("x", Kind::Numbers), req("y", Kind::Numbers), req("even", Kind::Bool)]),
    ],
};

const PROFILE: Kind = Kind::Tagged {
    tag: "kind",
    variants: &[
        ("zero", &[]),
        ("constant", &[req("value", Kind::Number)]),
        ("indicator", &[req("lo", Kind::Number), req("hi", Kind::Number), opt("height", Kind::Number)]),
        (
            "parabola",
            &[req("lo", Kind::Number), req("hi", Kind::Number), req("mass", Kind::Number), opt("floor", Kind::Number)],
        ),
        ("tabulated", &[req("x", Kind::Numbers), req("y", Kind::Numbers)]),
    ],
};

const MARCH: Kind = Kind::Tagged {
    tag: "method",
    variants: &[("newton", &[req("dt_max", Kind::Number)]), ("integrator", &[])],
};

const ROOT: &[Field] = &[
    opt("preset", Kind::Str),
    req("domain", Kind::Table(&[req("a", Kind::Number), req("b", Kind::Number)])),
    req(
        "mesh",
        Kind::Table(&[opt("cells", Kind::Integer), opt("dx", Kind::Number), opt("widths", Kind::Numbers)]),
    ),
    req("eps", Kind::Number),
    req("nu", Kind::Number),
    req(
        "kernels",
        Kind::Table(&[req("w11", KERNEL), req("w12", KERNEL), req("w21", KERNEL), req("w22", KERNEL)]),
    ),
    req("initial", Kind::Table(&[req("rho", PROFILE), req("eta", PROFILE)])),
    req(
        "time",
        Kind::Table(&[
            req("t_final", Kind::Number),
            req("dt_report", Kind::Number),
            opt("integrator", Kind::OneOf(&["rk4", "implicit_euler"])),
            opt("cfl_safety", Kind::Number),
            opt("fp_tol", Kind::Number),
            opt("fp_max_iter", Kind::Integer),
            opt("implicit_dt", Kind::Number),
        ]),
    ),
    opt("output", Kind::Table(&[opt("snapshots", Kind::Bool), opt("plots", Kind::Bool)])),
    opt("quadrature_order", Kind::Integer),
    opt(
        "convergence",
        Kind::Table(&[req("study_dx", Kind::Numbers), req("benchmark_dx", Kind::Number)]),
    ),
    opt(
        "steady",
        Kind::Table(&[
            req("tol", Kind::Number),
            req("t_max", Kind::Number),
            opt("support_threshold", Kind::Number),
            opt("march", MARCH),
        ]),
    ),
];

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a float",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn check_fields(table: &Table, fields: &[Field], skip: Option<&str>, path: &str, out: &mut Vec<String>) {
    for key in table.keys() {
        if Some(key.as_str()) != skip && !fields.iter().any(|f| f.key == key) {
            out.push(format!("{}: unknown key", join(path, key)));
        }
    }
    for f in fields {
        match table.get(f.key) {
            Some(v) => check(v, f.kind, &join(path, f.key), out),
            None if f.required => out.push(format!("{}: missing required key", join(path, f.key))),
            None => {}
        }
    }
}

fn check(v: &Value, kind: Kind, path: &str, out: &mut Vec<String>) {
    let mut expect = |what: &str| out.push(format!("{path}: expected {what}, got {}", type_name(v)));
    match kind {
        Kind::Number if !matches!(v, Value::Float(_) | Value::Integer(_)) => expect("a number"),
        Kind::Integer if !matches!(v, Value::Integer(_)) => expect("an integer"),
        Kind::Bool if !matches!(v, Value::Boolean(_)) => expect("a boolean"),
        Kind::Str if !matches!(v, Value::String(_)) => expect("a string"),
        Kind::OneOf(names) => match v {
            Value::String(s) if names.contains(&s.as_str()) => {}
            Value::String(s) => out.push(format!("{path}: unknown value {s:?}; expected one of {}", names.join(", "))),
            _ => expect("a string"),
        },
        Kind::Numbers => match v {
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    check(item, Kind::Number, &format!("{path}[{i}]"), out);
                }
            }
            _ => expect("an array of numbers"),
        },
        Kind::Table(fields) => match v {
            Value::Table(t) => check_fields(t, fields, None, path, out),
            _ => expect("a table"),
        },
        Kind::Tagged { tag, variants } => {
            let Value::Table(t) = v else {
                return expect("a table");
            };
            match t.get(tag) {
                None => out.push(format!("{}: missing required key", join(path, tag))),
                Some(Value::String(name)) => match variants.iter().find(|(n, _)| n == name) {
                    Some((_, fields)) => check_fields(t, fields, Some(tag), path, out),
                    None => {
                        let names: Vec<&str> = variants.iter().map(|(n, _)| *n).collect();
                        out.push(format!(
                            "{}: unknown value {name:?}; expected one of {}",
                            join(path, tag),
                            names.join(", ")
                        ));
                    }
                },
                Some(other) => out.push(format!("{}: expected a string, got {}", join(path, tag), type_name(other))),
            }
        }
        _ => {}
    }
}

/// Keys whose tables replace the base instead of merging into it.
fn replaces_whole(key: &str, over: &Table) -> bool {
    key == "mesh" || ["family", "kind", "method"].iter().any(|t| over.contains_key(*t))
}

/// Merges `over` into `base`, key by key.
pub fn deep_merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) if !replaces_whole(&key, &o) => deep_merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn apply_overrides(doc: &mut Table, o: &Overrides) {
    let mut set = |section: Option<&str>, key: &str, value: Value| {
        let table = match section {
            None => &mut *doc,
            Some(s) => match doc.entry(s).or_insert_with(|| Value::Table(Table::new())) {
                Value::Table(t) => t,
                // Left for the schema walk to report.
                _ => return,
            },
        };
        table.insert(key.to_string(), value);
    };
    if let Some(v) = o.eps {
        set(None, "eps", Value::Float(v));
    }
    if let Some(v) = o.nu {
        set(None, "nu", Value::Float(v));
    }
    if let Some(n) = o.cells {
        let mut mesh = Table::new();
        mesh.insert("cells".into(), Value::Integer(n as i64));
        set(None, "mesh", Value::Table(mesh));
    }
    if let Some(v) = o.t_final {
        set(Some("time"), "t_final", Value::Float(v));
    }
    if let Some(v) = o.dt_report {
        set(Some("time"), "dt_report", Value::Float(v));
    }
    if let Some(v) = &o.integrator {
        set(Some("time"), "integrator", Value::String(v.clone()));
    }
}

/// Parses and validates a configuration, reporting every violation.
pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    parse_config_with(text, &Overrides::default())
}

/// [`parse_config`] with command line overrides on top.
pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<SimulationConfig> {
    let mut user: Table = toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().trim().to_string()]))?;
    if let Some(p) = &overrides.preset {
        match user.get("preset") {
            Some(Value::String(q)) if q != p => {
                return Err(CliError::Config(vec![format!(
                    "preset: file selects {q:?} but the command line selects {p:?}"
                )]))
            }
            _ => {
                user.insert("preset".into(), Value::String(p.clone()));
            }
        }
    }
    let mut doc = match user.get("preset") {
        Some(Value::String(name)) => {
            let base = preset(name).map_err(|e| CliError::Config(vec![format!("preset: {e}")]))?;
            let Value::Table(mut base) = Value::try_from(&base).expect("configurations serialize to TOML") else {
                unreachable!("a struct serializes to a table")
            };
            deep_merge(&mut base, user);
            base
        }
        _ => user,
    };
    apply_overrides(&mut doc, overrides);
    let mut violations = Vec::new();
    check_fields(&doc, ROOT, None, "", &mut violations);
    if !violations.is_empty() {
        return Err(CliError::Config(violations));
    }
    let config: SimulationConfig = Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().trim().to_string()]))?;
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(CliError::Config(violations));
    }
    Ok(config)
}

/// Configuration of a named preset with overrides.
pub fn preset_config(name: &str, overrides: &Overrides) -> Result<SimulationConfig> {
    let o = Overrides {
        preset: Some(name.to_string()),
        ..overrides.clone()
    };
    parse_config_with("", &o)
}

/// SHA-256 of the canonical JSON form of a resolved configuration.
pub fn config_hash(config: &SimulationConfig) -> String {
    let json = serde_json::to_string(config).expect("configurations serialize to JSON");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// The resolved configuration as TOML text, which parses back to itself.
pub fn to_toml(config: &SimulationConfig) -> String {
    toml::to_string_pretty(config).expect("configurations serialize to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
eps = 0.1
nu = 0.5
domain = { a = 0, b = 1 }
mesh = { cells = 16 }
time = { t_final = 0.1, dt_report = 0.05 }

[kernels]
w11 = { family = "zero" }
w12 = { family = "zero" }
w21 = { family = "zero" }
w22 = { family = "zero" }

[initial]
rho = { kind = "constant", value = 1.0 }
eta = { kind = "indicator", lo = 0.25, hi = 0.5 }
"#;

    fn violations(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(CliError::Config(v)) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_is_accepted() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.eps, 0.1);
        assert_eq!(c.mesh.cells, Some(16));
        assert!(c.kernels.is_zero());
    }

    #[test]
    fn negative_eps_names_the_field() {
        let v = violations(&MINIMAL.replace("eps = 0.1", "eps = -1"));
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("eps"), "{v:?}");
    }

    #[test]
    fn every_problem_is_listed() {
        let text = MINIMAL
            .replace("nu = 0.5\n", "colour = 3\n")
            .replace("b = 1", "b = \"one\"")
            .replace("value = 1.0", "value = 1.0, extra = 2")
            .replace("family = \"zero\" }\nw22", "family = \"cubic\" }\nw22");
        let v = violations(&text);
        for expected in [
            "colour: unknown key",
            "nu: missing required key",
            "domain.b: expected a number, got a string",
            "initial.rho.extra: unknown key",
            "kernels.w21.family: unknown value \"cubic\"",
        ] {
            assert!(v.iter().any(|m| m.starts_with(expected)), "{expected} not in {v:?}");
        }
        assert_eq!(v.len(), 5, "{v:?}");
    }

    #[test]
    fn newtonian_preset_expands() {
        let c = parse_config("preset = \"newtonian_attrep\"").unwrap();
        assert_eq!((c.domain.a, c.domain.b), (0.0, 5.0));
        assert_eq!(c.mesh.dx, Some(2f64.powi(-8)));
        assert_eq!(c.nu, 0.05);
        assert_eq!(c.eps, 0.0);
        assert_eq!(c.kernels.w11, crossdiff::KernelSpec::Quadratic);
        assert_eq!(c.kernels.w22, crossdiff::KernelSpec::Quadratic);
        assert_eq!(c.kernels.w12, crossdiff::KernelSpec::absolute(1));
        assert_eq!(c.kernels.w21, crossdiff::KernelSpec::absolute(-1));
    }

    #[test]
    fn file_keys_merge_over_the_preset() {
        let c = parse_config(
            "preset = \"gaussian_eps01\"\neps = 0.3\n[time]\nt_final = 0.2\n[kernels.w12]\nfamily = \"zero\"\n",
        )
        .unwrap();
        assert_eq!(c.eps, 0.3);
        assert_eq!(c.time.t_final, 0.2);
        assert_eq!(c.time.dt_report, 0.05);
        assert_eq!(c.kernels.w12, crossdiff::KernelSpec::Zero);
        assert_eq!(c.kernels.w11, crossdiff::KernelSpec::gaussian(1.0, 4.0, 0.1));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            eps: Some(0.04),
            cells: Some(640),
            integrator: Some("implicit_euler".into()),
            ..Overrides::default()
        };
        let c = preset_config("newtonian_attrep", &o).unwrap();
        assert_eq!(c.eps, 0.04);
        assert_eq!(c.mesh, crossdiff::config::MeshSpec::cells(640));
        assert_eq!(c.time.integrator, crossdiff::config::IntegratorKind::ImplicitEuler);
        let bad = Overrides {
            integrator: Some("euler".into()),
            ..Overrides::default()
        };
        assert!(matches!(preset_config("newtonian_attrep", &bad), Err(CliError::Config(_))));
    }

    #[test]
    fn conflicting_presets_are_rejected() {
        let o = Overrides {
            preset: Some("gaussian_eps05".into()),
            ..Overrides::default()
        };
        assert!(parse_config_with("preset = \"gaussian_eps01\"", &o).is_err());
        assert!(parse_config("preset = \"nope\"").is_err());
    }

    #[test]
    fn resolved_configs_round_trip() {
        for name in crossdiff::experiments::PRESETS {
            let c = preset_config(name, &Overrides::default()).unwrap();
            let back = parse_config(&to_toml(&c)).unwrap();
            assert_eq!(back, c);
            assert_eq!(config_hash(&back), config_hash(&c));
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.nu = 0.25;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
