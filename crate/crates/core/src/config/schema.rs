//! Structural checks on the raw JSON document, so that every violation is
//! reported with its path before anything is deserialized.

use serde_json::{Map, Value};

use super::ConfigIssue;

type Obj = Map<String, Value>;

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

#[derive(Default)]
pub(super) struct Checker {
    pub issues: Vec<ConfigIssue>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Obj> {
        match v {
            Value::Object(m) => Some(m),
            _ => {
                self.push(path, format!("expected an object, got {}", type_name(v)));
                None
            }
        }
    }

    /// Flags missing required keys and keys outside `required ∪ optional`.
    fn keys(&mut self, m: &Obj, path: &str, required: &[&str], optional: &[&str]) {
        for r in required {
            if m.get(*r).is_none_or(Value::is_null) {
                self.push(join(path, r), "missing required key");
            }
        }
        for k in m.keys() {
            if !required.contains(&k.as_str()) && !optional.contains(&k.as_str()) {
                self.push(join(path, k), "unknown key");
            }
        }
    }

    fn present<'v>(m: &'v Obj, key: &str) -> Option<&'v Value> {
        m.get(key).filter(|v| !v.is_null())
    }

    fn uint(&mut self, m: &Obj, path: &str, key: &str, min: u64) -> Option<u64> {
        let v = Self::present(m, key)?;
        let p = join(path, key);
        match v.as_u64() {
            Some(x) if x >= min => Some(x),
            Some(x) => {
                self.push(p, format!("must be at least {min}, got {x}"));
                None
            }
            None => {
                self.push(p, format!("expected a non-negative integer, got {}", type_name(v)));
                None
            }
        }
    }

    fn float(&mut self, m: &Obj, path: &str, key: &str) -> Option<f64> {
        let v = Self::present(m, key)?;
        match v.as_f64() {
            Some(x) => Some(x),
            None => {
                self.push(join(path, key), format!("expected a number, got {}", type_name(v)));
                None
            }
        }
    }

    /// A number passing `ok`, otherwise a range issue described by `want`.
    fn float_in(&mut self, m: &Obj, path: &str, key: &str, want: &str, ok: impl Fn(f64) -> bool) -> Option<f64> {
        let x = self.float(m, path, key)?;
        if ok(x) {
            Some(x)
        } else {
            self.push(join(path, key), format!("out of range: must be {want}, got {x}"));
            None
        }
    }

    fn boolean(&mut self, m: &Obj, path: &str, key: &str) {
        if let Some(v) = Self::present(m, key) {
            if !v.is_boolean() {
                self.push(join(path, key), format!("expected a boolean, got {}", type_name(v)));
            }
        }
    }

    fn string<'v>(&mut self, m: &'v Obj, path: &str, key: &str) -> Option<&'v str> {
        let v = Self::present(m, key)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.push(join(path, key), format!("expected a string, got {}", type_name(v)));
                None
            }
        }
    }

    fn one_of<'v>(&mut self, m: &'v Obj, path: &str, key: &str, allowed: &[&str]) -> Option<&'v str> {
        let s = self.string(m, path, key)?;
        if allowed.contains(&s) {
            Some(s)
        } else {
            self.push(join(path, key), format!("unknown value {s:?}, expected one of {}", allowed.join(", ")));
            None
        }
    }

    /// Dispatches on the `kind` tag of a section; `variants` lists each kind
    /// with its own required and optional keys.
    fn tagged<'v>(
        &mut self,
        m: &'v Obj,
        path: &str,
        variants: &[(&str, &[&str], &[&str])],
        common: &[&str],
    ) -> Option<&'v str> {
        let names: Vec<&str> = variants.iter().map(|v| v.0).collect();
        if Self::present(m, "kind").is_none() {
            self.push(join(path, "kind"), "missing required key");
            return None;
        }
        let kind = self.one_of(m, path, "kind", &names)?;
        let (_, required, optional) = variants.iter().find(|v| v.0 == kind)?;
        let optional: Vec<&str> = optional.iter().chain(common).chain(&["kind"]).copied().collect();
        self.keys(m, path, required, &optional);
        Some(kind)
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

pub(super) const TOP_REQUIRED: &[&str] = &[
    "model",
    "dataset",
    "optimizer",
    "schedule",
    "batch_policy",
    "epochs",
    "seed",
];
pub(super) const TOP_OPTIONAL: &[&str] = &["lr_schedule", "metrics", "mode", "output", "cluster"];

/// Runs every check and returns the collected issues.
pub(super) fn check(doc: &Value) -> Vec<ConfigIssue> {
    let mut c = Checker::default();
    let Some(top) = c.object(doc, "") else {
        return c.issues;
    };
    c.keys(top, "", TOP_REQUIRED, TOP_OPTIONAL);
    c.uint(top, "", "epochs", 1);
    c.uint(top, "", "seed", 0);

    let model_dims = top.get("model").and_then(|v| model(&mut c, v));
    let data_dims = top.get("dataset").and_then(|v| dataset(&mut c, v));
    if let (Some((input, classes)), Some((dim, data_classes))) = (model_dims, data_dims) {
        if input != dim {
            c.push("dataset.dim", format!("dataset dimension {dim} does not match model input {input}"));
        }
        if let (Some(m), Some(d)) = (classes, data_classes) {
            if d > m {
                c.push("model.classes", format!("model has {m} classes but the dataset has {d}"));
            }
        }
    }
    if let Some(v) = top.get("optimizer") {
        optimizer(&mut c, v);
    }
    if let Some(v) = top.get("lr_schedule").filter(|v| !v.is_null()) {
        lr_schedule(&mut c, v);
    }
    if let Some(v) = top.get("schedule") {
        schedule(&mut c, v);
    }
    if let Some(v) = top.get("batch_policy") {
        if let Some(m) = c.object(v, "batch_policy") {
            let p = "batch_policy";
            if c.tagged(m, p, &[("fixed_total", &["value"], &[]), ("fixed_per_worker", &["value"], &[])], &[])
                .is_some()
            {
                c.uint(m, p, "value", 1);
            }
        }
    }
    if let Some(v) = top.get("metrics").filter(|v| !v.is_null()) {
        if let Some(m) = c.object(v, "metrics") {
            c.keys(m, "metrics", &[], &["probe_samples", "record_samples"]);
            c.uint(m, "metrics", "probe_samples", 0);
            c.boolean(m, "metrics", "record_samples");
        }
    }
    c.one_of(top, "", "mode", &["simulate", "cluster_inproc", "cluster_tcp"]);
    c.string(top, "", "output");
    if let Some(v) = top.get("cluster").filter(|v| !v.is_null()) {
        cluster(&mut c, v);
    }
    c.issues
}

/// Returns `(input_dim, classes)`.
fn model(c: &mut Checker, v: &Value) -> Option<(usize, Option<usize>)> {
    let p = "model";
    let m = c.object(v, p)?;
    let kind = c.tagged(
        m,
        p,
        &[
            ("quadratic", &["eigenvalues"], &["rotation_seed"]),
            ("logistic_regression", &["input_dim"], &[]),
            ("mlp", &["input_dim", "hidden", "classes"], &[]),
        ],
        &["weight_decay", "decay_all_params"],
    )?;
    c.float_in(m, p, "weight_decay", "finite and >= 0", |x| x >= 0.0 && x.is_finite());
    c.boolean(m, p, "decay_all_params");
    match kind {
        "quadratic" => {
            c.uint(m, p, "rotation_seed", 0);
            let eig = Checker::present(m, "eigenvalues")?;
            let Some(arr) = eig.as_array() else {
                c.push("model.eigenvalues", format!("expected an array, got {}", type_name(eig)));
                return None;
            };
            if arr.is_empty() {
                c.push("model.eigenvalues", "must not be empty");
            }
            for (i, x) in arr.iter().enumerate() {
                if !x.as_f64().is_some_and(|x| x >= 0.0 && x.is_finite()) {
                    c.push(format!("model.eigenvalues[{i}]"), "must be a finite number >= 0");
                }
            }
            Some((arr.len(), None))
        }
        "logistic_regression" => Some((c.uint(m, p, "input_dim", 1)? as usize, Some(2))),
        _ => {
            c.uint(m, p, "hidden", 1);
            let classes = c.uint(m, p, "classes", 2);
            Some((c.uint(m, p, "input_dim", 1)? as usize, classes.map(|x| x as usize)))
        }
    }
}

/// Returns `(dim, classes)`.
fn dataset(c: &mut Checker, v: &Value) -> Option<(usize, Option<usize>)> {
    let p = "dataset";
    let m = c.object(v, p)?;
    let kind = c.tagged(
        m,
        p,
        &[
            ("blobs", &[], &["dim", "classes", "separation", "spread", "label_noise"]),
            ("noisy_quadratic", &["dim", "sigma2"], &[]),
        ],
        &["n", "seed"],
    )?;
    for key in ["n", "seed"] {
        if Checker::present(m, key).is_none() {
            c.push(join(p, key), "missing required key");
        }
    }
    c.uint(m, p, "n", 1);
    c.uint(m, p, "seed", 0);
    if kind == "blobs" {
        let dim = if Checker::present(m, "dim").is_some() { c.uint(m, p, "dim", 1)? } else { 2 };
        let classes = if Checker::present(m, "classes").is_some() {
            c.uint(m, p, "classes", 2)?
        } else {
            2
        };
        c.float_in(m, p, "separation", "finite", f64::is_finite);
        c.float_in(m, p, "spread", "finite and >= 0", |x| x >= 0.0 && x.is_finite());
        c.float_in(m, p, "label_noise", "in [0, 1]", |x| (0.0..=1.0).contains(&x));
        Some((dim as usize, Some(classes as usize)))
    } else {
        c.float_in(m, p, "sigma2", "finite and >= 0", |x| x >= 0.0 && x.is_finite());
        Some((c.uint(m, p, "dim", 1)? as usize, None))
    }
}

fn optimizer(c: &mut Checker, v: &Value) {
    let p = "optimizer";
    let Some(m) = c.object(v, p) else { return };
    c.keys(
        m,
        p,
        &["strategy", "base_lr", "base_batch"],
        &["momentum", "compensation_t_mult", "momentum_form"],
    );
    c.one_of(
        m,
        p,
        "strategy",
        &["plain_sgd", "momentum_sgd", "linear_scaling", "dynamic_sgd", "decoupled"],
    );
    c.float_in(m, p, "base_lr", "> 0", |x| x > 0.0 && x.is_finite());
    c.float_in(m, p, "momentum", "in [0, 1)", |x| (0.0..1.0).contains(&x));
    c.uint(m, p, "base_batch", 1);
    c.float_in(m, p, "compensation_t_mult", "> 0", |x| x > 0.0 && x.is_finite());
    c.one_of(m, p, "momentum_form", &["u", "v"]);
}

fn lr_schedule(c: &mut Checker, v: &Value) {
    let p = "lr_schedule";
    let Some(m) = c.object(v, p) else { return };
    c.keys(m, p, &["kind"], &["warmup_epochs", "warmup_floor"]);
    c.one_of(m, p, "kind", &["constant", "cosine"]);
    c.float_in(m, p, "warmup_epochs", "finite and >= 0", |x| x >= 0.0 && x.is_finite());
    c.float_in(m, p, "warmup_floor", "in [0, 1]", |x| (0.0..=1.0).contains(&x));
}

fn schedule(c: &mut Checker, v: &Value) {
    let p = "schedule";
    let Some(m) = c.object(v, p) else { return };
    let Some(kind) = c.tagged(
        m,
        p,
        &[
            ("static", &[], &[]),
            ("spike", &["epoch", "k"], &[]),
            ("damp", &["epoch", "k"], &[]),
            ("rand_step", &["period_epochs", "min_scale", "max_scale", "seed"], &[]),
        ],
        &["n_base"],
    ) else {
        return;
    };
    if Checker::present(m, "n_base").is_none() {
        c.push("schedule.n_base", "missing required key");
    }
    let n_base = c.uint(m, p, "n_base", 1);
    match kind {
        "spike" | "damp" => {
            c.uint(m, p, "epoch", 0);
            let k = c.float_in(m, p, "k", "> 0", |x| x > 0.0 && x.is_finite());
            if let (Some(n), Some(k)) = (n_base, k) {
                if kind == "damp" && (n as f64 / k) < 1.0 {
                    c.push("schedule.k", format!("damp by {k} leaves no workers out of {n}"));
                }
            }
        }
        "rand_step" => {
            c.uint(m, p, "period_epochs", 1);
            c.uint(m, p, "seed", 0);
            let lo = c.uint(m, p, "min_scale", 1);
            let hi = c.uint(m, p, "max_scale", 1);
            for (key, x) in [("min_scale", lo), ("max_scale", hi)] {
                if x.is_some_and(|x| x > u32::MAX as u64) {
                    c.push(join(p, key), "must fit in 32 bits");
                }
            }
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if lo > hi {
                    c.push("schedule.max_scale", format!("must be >= min_scale ({lo}), got {hi}"));
                }
            }
        }
        _ => {}
    }
}

fn cluster(c: &mut Checker, v: &Value) {
    let p = "cluster";
    let Some(m) = c.object(v, p) else { return };
    c.keys(
        m,
        p,
        &[],
        &["heartbeat_ms", "eviction_threshold", "workers", "listen", "control", "max_frame"],
    );
    c.uint(m, p, "heartbeat_ms", 1);
    c.uint(m, p, "eviction_threshold", 1);
    c.uint(m, p, "workers", 1);
    c.string(m, p, "listen");
    c.string(m, p, "control");
    if let Some(x) = c.uint(m, p, "max_frame", 64) {
        if x > u32::MAX as u64 {
            c.push("cluster.max_frame", "must fit in 32 bits");
        }
    }
}
