use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use roughflow::io::{
    matrix_to_rows, read_rough_path, write_cascade, write_diffeo_grid, write_json_file, write_matrix_path,
    write_rough_path, write_trajectory,
};
use roughflow::{
    cascade_decompose, decompose_blocks, detect_explosion, evolve_decomposition, factor_matrix_with_real_log,
    geometricity_defect, lift_brownian, recompose, recompose_cascade, solve_linear_flow, solve_rde, time_path,
    verify_planar_decomposition, BlockPartition, DMatrix, DVector, GridSpec, Rect, RoughPath, TimeGrid,
    VectorFieldSet,
};
use serde_json::{json, Value};

use crate::config::{Command, JobConfig, Params, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The run finished but the mathematics stopped it (explosion, blow-up,
    /// loss of transversality).
    Event,
}

#[derive(Debug)]
pub struct Outcome {
    pub status: Status,
    pub results: Value,
}

/// Collects artifact paths and refuses to overwrite inputs.
pub struct Artifacts {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    pub written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, inputs: &[PathBuf]) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let inputs = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs,
            written: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Ok(c) = p.canonicalize() {
            if self.inputs.contains(&c) {
                bail!("refusing to overwrite input file {}", p.display());
            }
        }
        self.written.push(name.to_string());
        Ok(p)
    }
}

pub fn run(config: &JobConfig, source: &Source, out: &mut Artifacts) -> Result<Outcome> {
    let p = Params::new(&config.parameters, source);
    match config.command {
        Command::Lift => lift(&p, config, out),
        Command::Solve => solve(&p, config, out),
        Command::DecomposeLinear => decompose_linear(&p, config, out),
        Command::Cascade => cascade(&p, config, out),
        Command::Factorize => factorize(&p, out),
        Command::GridDecompose => grid_decompose(&p, config, out),
        Command::Verify => verify(&p),
    }
}

fn driver(p: &Params, config: &JobConfig, default_kind: &str, default_t: f64, default_n: usize) -> Result<RoughPath> {
    if let Some(path) = config.inputs.get("path") {
        return read_rough_path(path).with_context(|| format!("reading rough path {}", path.display()));
    }
    let kind = p.choice("driver", default_kind, &["time", "brownian"])?;
    let t = p.positive("T", default_t)?;
    let n = p.usize("N", default_n, 1, 50_000_000)?;
    let grid = TimeGrid::uniform(t, n)?;
    Ok(match kind.as_str() {
        "time" => time_path(&grid, p.f64("alpha", 0.5)?)?,
        _ => {
            let d = p.usize("d", 1, 1, 64)?;
            let refinement = p.usize("refinement", 1, 1, 1 << 16)?;
            lift_brownian(p.u64("seed", 0)?, d, &grid, refinement)?
        }
    })
}

fn lift(p: &Params, config: &JobConfig, out: &mut Artifacts) -> Result<Outcome> {
    let rp = driver(p, config, "brownian", 1.0, 1000)?;
    let file = out.path("path.csv")?;
    out.path("path.json")?;
    write_rough_path(&rp, &file)?;
    let geo = (0..rp.len() - 1)
        .map(|n| geometricity_defect(&rp, n, n + 1))
        .collect::<roughflow::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let holder = rp.holder_norms();
    Ok(Outcome {
        status: Status::Ok,
        results: json!({
            "d": rp.dim(),
            "steps": rp.len() - 1,
            "alpha": rp.alpha(),
            "holder": holder,
            "max_step_geometricity_defect": geo,
        }),
    })
}

fn vector_field(p: &Params) -> Result<VectorFieldSet> {
    let kind = p.choice("field", "linear", &["linear", "rotation", "perturbed-rotation"])?;
    Ok(match kind.as_str() {
        "rotation" => VectorFieldSet::linear(vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])])?,
        "perturbed-rotation" => VectorFieldSet::new(
            2,
            1,
            |y: &DVector<f64>| DMatrix::from_row_slice(2, 1, &[-y[1] + 0.1 * y[0] * y[0], y[0]]),
            |y: &DVector<f64>| vec![DMatrix::from_row_slice(2, 2, &[0.2 * y[0], -1.0, 1.0, 0.0])],
        )?,
        _ => {
            let mats = p
                .matrices("matrices")?
                .ok_or_else(|| p.error("field", "a linear field needs `matrices` (one square matrix per driver component)"))?;
            VectorFieldSet::linear(mats)?
        }
    })
}

fn solve(p: &Params, config: &JobConfig, out: &mut Artifacts) -> Result<Outcome> {
    let vf = vector_field(p)?;
    let rp = driver(p, config, "time", 1.0, 1000)?;
    let y0 = match p.vector("y0")? {
        Some(y) => DVector::from_vec(y),
        None => {
            let mut y = DVector::zeros(vf.state_dim());
            y[0] = 1.0;
            y
        }
    };
    if y0.len() != vf.state_dim() {
        return Err(p.error("y0", format!("`y0` must have {} entries, got {}", vf.state_dim(), y0.len())).into());
    }
    let tr = solve_rde(&vf, &rp, &y0, p.bool("jacobian", false)?)?;
    write_trajectory(&tr, &out.path("trajectory.csv")?)?;
    let blowup = tr.blowup();
    Ok(Outcome {
        status: if blowup.is_some() { Status::Event } else { Status::Ok },
        results: json!({
            "steps_completed": tr.len() - 1,
            "final_time": tr.times().last(),
            "final_state": tr.last().as_slice(),
            "blowup": blowup.map(|b| json!({"index": b.index, "time": b.time})),
        }),
    })
}

fn square_matrix(p: &Params, key: &str) -> Result<DMatrix<f64>> {
    let a = p.matrix(key)?.ok_or_else(|| p.error(key, format!("missing required parameter `{key}`")))?;
    if !a.is_square() {
        return Err(p.error(key, format!("`{key}` must be square, got {}×{}", a.nrows(), a.ncols())).into());
    }
    Ok(a)
}

fn decompose_linear(p: &Params, config: &JobConfig, out: &mut Artifacts) -> Result<Outcome> {
    let a = square_matrix(p, "A")?;
    let m = a.nrows();
    if m < 2 {
        return Err(p.error("A", "`A` must be at least 2×2").into());
    }
    let k = p.usize("k", 1, 1, m - 1)?;
    let threshold = p.positive("threshold", 1e6)?;
    let rp = driver(p, config, "time", 1.0, 4000)?;
    let pair = decompose_blocks(&a, BlockPartition::new(k, m - k)?, &rp, threshold)?;
    let flow = solve_linear_flow(std::slice::from_ref(&a), &rp)?;
    let residual = recompose(&pair, &flow)?;
    write_matrix_path(&pair.times, &pair.eta, &out.path("eta.csv")?)?;
    write_matrix_path(&pair.times, &pair.psi, &out.path("psi.csv")?)?;
    write_matrix_path(&flow.times, &flow.matrices, &out.path("phi.csv")?)?;
    let report = detect_explosion(&pair);
    Ok(Outcome {
        status: if report.exploded { Status::Event } else { Status::Ok },
        results: json!({
            "samples": pair.len(),
            "recomposition_residual": residual,
            "explosion": report,
        }),
    })
}

fn cascade(p: &Params, config: &JobConfig, out: &mut Artifacts) -> Result<Outcome> {
    let a = square_matrix(p, "A")?;
    let threshold = p.positive("threshold", 1e6)?;
    let rp = driver(p, config, "time", 1.0, 4000)?;
    let cf = cascade_decompose(&a, &rp, threshold)?;
    let flow = solve_linear_flow(std::slice::from_ref(&a), &rp)?;
    let residual = recompose_cascade(&cf, &flow)?;
    for i in 0..cf.k() {
        out.path(&format!("cascade_factor{}.csv", i + 1))?;
    }
    out.path("cascade.json")?;
    write_cascade(&cf, &out.dir, "cascade")?;
    let max_entry = cf.factors.iter().flatten().map(|f| f.amax()).fold(0.0, f64::max);
    Ok(Outcome {
        status: Status::Ok,
        results: json!({
            "block_dims": cf.basis.block_dims,
            "samples": cf.len(),
            "recomposition_residual": residual,
            "max_factor_entry": max_entry,
        }),
    })
}

fn factorize(p: &Params, out: &mut Artifacts) -> Result<Outcome> {
    let m = square_matrix(p, "M")?;
    let tol = p.positive("tol", 1e-8)?;
    let f = factor_matrix_with_real_log(&m, tol)?;
    let factors: Vec<_> = f.factors.iter().map(matrix_to_rows).collect();
    let doc = json!({
        "P": matrix_to_rows(&f.basis.p),
        "block_dims": f.basis.block_dims,
        "log": matrix_to_rows(&f.log),
        "factors": factors,
        "residual": f.residual,
        "steps": f.steps,
    });
    write_json_file(&doc, &out.path("factors.json")?)?;
    Ok(Outcome {
        status: Status::Ok,
        results: doc,
    })
}

fn grid_decompose(p: &Params, config: &JobConfig, out: &mut Artifacts) -> Result<Outcome> {
    let vf = vector_field(p)?;
    if vf.state_dim() != 2 || vf.driver_dim() != 1 {
        return Err(p.error("field", "grid decomposition needs a planar field with one driver component").into());
    }
    let half = p.positive("half_width", 2.0)?;
    let nx = p.usize("nx", 101, 3, 4001)?;
    let ny = p.usize("ny", nx, 3, 4001)?;
    let mut spec = GridSpec::new(Rect::square(half), nx, ny);
    spec.margin = p.f64("margin", spec.margin)?;
    spec.threshold = p.positive("threshold", spec.threshold)?;
    if p.has("snapshot_every") {
        spec.snapshot_every = p.usize("snapshot_every", 1, 1, usize::MAX)?;
    }
    let rp = driver(p, config, "time", 0.5, 500)?;
    let dec = evolve_decomposition(&vf, &rp, spec)?;
    let report = verify_planar_decomposition(&dec)?;
    let mut snapshots = Vec::new();
    for s in &dec.snapshots {
        for (name, grid) in [("eta", &s.eta), ("psi", &s.psi), ("phi", &s.phi)] {
            write_diffeo_grid(grid, &out.path(&format!("{name}_{:06}.csv", s.index))?)?;
        }
        snapshots.push(json!({"index": s.index, "time": s.time}));
    }
    Ok(Outcome {
        status: if dec.truncation.is_some() { Status::Event } else { Status::Ok },
        results: json!({
            "report": report,
            "truncation": dec.truncation,
            "snapshots": snapshots,
        }),
    })
}

struct SubJob {
    name: &'static str,
    exit_code: i32,
    passed: bool,
    values: Value,
}

fn verify(p: &Params) -> Result<Outcome> {
    let suite = p.choice("suite", "rotation", &["rotation"])?;
    let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let unit = |t: f64, n: usize| time_path(&TimeGrid::uniform(t, n)?, 0.5);
    let mut jobs = Vec::new();

    let flow = solve_linear_flow(std::slice::from_ref(&rot), &unit(1.0, 2000)?)?;
    let y = flow.last().column(0).into_owned();
    let (s, c) = 1f64.sin_cos();
    let err = (y[0] - c).abs().max((y[1] - s).abs());
    jobs.push(SubJob {
        name: "flow",
        exit_code: 0,
        passed: err <= 1e-4,
        values: json!({"N": 2000, "error": err, "tolerance": 1e-4}),
    });

    let pair = decompose_blocks(&rot, BlockPartition::new(1, 1)?, &unit(0.5, 2000)?, 1e6)?;
    let [g1, g2, f3, f4] = pair.blocks(pair.len() - 1);
    let x: f64 = 0.5;
    let err = [(g1, 1.0 / x.cos()), (g2, -x.tan()), (f3, x.sin()), (f4, x.cos())]
        .iter()
        .map(|(b, w)| (b[(0, 0)] - w).abs())
        .fold(0.0, f64::max);
    jobs.push(SubJob {
        name: "blocks",
        exit_code: 0,
        passed: err <= 1e-4,
        values: json!({"X": 0.5, "N": 2000, "error": err, "tolerance": 1e-4}),
    });

    let rp = unit(1.4, 4000)?;
    let pair = decompose_blocks(&rot, BlockPartition::new(1, 1)?, &rp, 1e6)?;
    let residual = recompose(&pair, &solve_linear_flow(std::slice::from_ref(&rot), &rp)?)?;
    jobs.push(SubJob {
        name: "recomposition",
        exit_code: 0,
        passed: !pair.explosion.exploded && residual <= 1e-3,
        values: json!({"T": 1.4, "N": 4000, "recomposition_residual": residual, "tolerance": 1e-3}),
    });

    let pair = decompose_blocks(&rot, BlockPartition::new(1, 1)?, &unit(2.0, 8000)?, 1e6)?;
    let report = detect_explosion(&pair);
    let tau = report.time;
    jobs.push(SubJob {
        name: "explosion",
        exit_code: if report.exploded { 2 } else { 0 },
        passed: tau.is_some_and(|t| (t - FRAC_PI_2).abs() <= 0.05),
        values: json!({"T": 2.0, "N": 8000, "explosion": report, "expected": FRAC_PI_2, "tolerance": 0.05}),
    });

    let passed = jobs.iter().all(|j| j.passed);
    let subjobs: Vec<Value> = jobs
        .into_iter()
        .map(|j| json!({"name": j.name, "exit_code": j.exit_code, "passed": j.passed, "values": j.values}))
        .collect();
    if !passed {
        bail!(VerificationFailed(json!({"suite": suite, "subjobs": subjobs})));
    }
    Ok(Outcome {
        status: Status::Ok,
        results: json!({"suite": suite, "passed": true, "subjobs": subjobs}),
    })
}

/// A bundled suite ran but some check missed its tolerance.
#[derive(Debug)]
pub struct VerificationFailed(pub Value);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification suite failed")
    }
}

impl std::error::Error for VerificationFailed {}
