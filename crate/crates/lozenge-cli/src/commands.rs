use crate::manifest::{read_input, write_file, InputFile, RunManifest};
use crate::*;
use lozenge::counting::{count_hexagon_product, count_lgv, count_tilings, ln_biguint};
use lozenge::domain::{Domain, PolygonalDomain};
use lozenge::fluctuations::{
    compare_covariances, distance_to_curve, gaussianity_report, height_from_trajectory, CovarianceRow,
    FluctuationEnsemble, GffPredictor, ProbeSet, ProbeStats, SamplingMethod,
};
use lozenge::limit_shape::{
    arctic_curve, gradient_to_slope, solve_variational, BottomHeight, SolverOptions, LIQUID_EPS,
};
use lozenge::loop_eq::{analyticity_check, cancel_check, expansion_report, CancelCheck, ExpansionReport, LoopQuantities, ParticleProfile};
use lozenge::rational::to_lattice;
use lozenge::sampler::{ExactSampler, Mcmc, WalkTrajectory};
use lozenge::weights::DriftedWalkWeights;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Files written by a command and the default manifest location.
struct Outcome {
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
}

const STDOUT_MANIFEST: &str = "lozenge-manifest.json";

fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_for(out: &Option<PathBuf>) -> PathBuf {
    out.as_ref().map_or_else(|| PathBuf::from(STDOUT_MANIFEST), |p| sibling(p, ".manifest.json"))
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> CliResult<Vec<PathBuf>> {
    match out {
        Some(p) => {
            write_file(p, bytes)?;
            Ok(vec![p.clone()])
        }
        None => {
            std::io::stdout()
                .write_all(bytes)
                .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source })?;
            Ok(Vec::new())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report serializes");
    s.push(b'\n');
    s
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // Fails only if the pool already exists (replay), which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let started = Instant::now();
    let mut inputs = Vec::new();
    let seed = cli.global.seed;
    let (name, outcome) = match &cli.command {
        Command::Count(a) => ("count", count(a, &mut inputs)?),
        Command::Sample(a) => ("sample", sample(a, seed, &mut inputs)?),
        Command::LimitShape(a) => ("limit-shape", limit_shape(a, &mut inputs)?),
        Command::LoopeqVerify(a) => ("loopeq-verify", loopeq_verify(a, &mut inputs)?),
        Command::Fluctuations(a) => ("fluctuations", fluctuations(a, seed, &mut inputs)?),
        Command::Replay(a) => return replay(&a.manifest_file),
    };
    let path = cli.global.manifest.clone().unwrap_or(outcome.manifest);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: name.to_string(),
        argv,
        seed,
        threads: rayon::current_num_threads(),
        inputs,
        outputs: outcome.outputs,
        wall_time_s: started.elapsed().as_secs_f64(),
        cli,
    };
    log::info!("{name} done in {:.2} s; manifest {}", manifest.wall_time_s, path.display());
    write_file(&path, &to_json(&manifest))
}

fn replay(path: &Path) -> CliResult<()> {
    let m = RunManifest::load(path)?;
    m.check_inputs()?;
    let argv: Vec<String> = m.argv.clone();
    let cli = Cli::try_parse_from(std::iter::once("lozenge".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(format!("manifest command line does not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    dispatch(cli, argv)
}

fn load_domain(path: &Path, inputs: &mut Vec<InputFile>) -> CliResult<Domain> {
    Ok(Domain::from_json(&read_input(path, inputs)?)?)
}

#[derive(Serialize)]
struct OracleCheck {
    kind: Oracle,
    count: String,
    agrees: bool,
}

#[derive(Serialize)]
struct CountOutput {
    count: String,
    log_density: f64,
    levels: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleCheck>,
}

/// Side lengths `(a, b, c)` if the domain is a translated `a x b x c`
/// hexagon.
fn hexagon_sides(d: &Domain) -> Option<(i64, i64, i64)> {
    let n = d.n();
    let pts: Vec<(i64, i64)> = d
        .raw()
        .vertices()
        .iter()
        .map(|p| Some((to_lattice(&p.x, n)?, to_lattice(&p.t, n)?)))
        .collect::<Option<_>>()?;
    if pts.len() != 6 {
        return None;
    }
    let s = (0..6).min_by_key(|&i| (pts[i].1, pts[i].0))?;
    let (x0, t0) = pts[s];
    let rel: Vec<(i64, i64)> = (0..6).map(|k| pts[(s + k) % 6]).map(|(x, t)| (x - x0, t - t0)).collect();
    let (a, c, b) = (rel[1].0, rel[2].1, rel[5].1);
    let expect = PolygonalDomain::hexagon(n, a, b, c);
    let want: Vec<(i64, i64)> = expect.vertices().iter().map(|p| (to_lattice(&p.x, n).unwrap(), to_lattice(&p.t, n).unwrap())).collect();
    (a > 0 && b > 0 && c > 0 && rel == want).then_some((a, b, c))
}

fn count(a: &CountArgs, inputs: &mut Vec<InputFile>) -> CliResult<Outcome> {
    let d = load_domain(&a.domain, inputs)?;
    let c = count_tilings(&d)?;
    let n = d.n() as f64;
    let oracle = match a.oracle {
        Oracle::None => None,
        Oracle::Product => {
            let (x, y, z) = hexagon_sides(&d)
                .ok_or_else(|| CliError::Usage("the product oracle needs an a x b x c hexagon".into()))?;
            Some(count_hexagon_product(x as u32, y as u32, z as u32))
        }
        Oracle::Lgv => {
            let end = d.terminal_configuration()?;
            Some(count_lgv(&d.initial_configuration(), &end, d.steps(), d.n())?)
        }
    };
    let out = CountOutput {
        count: c.value.to_string(),
        log_density: ln_biguint(&c.value) / (n * n),
        levels: d.steps(),
        oracle: oracle.map(|v| OracleCheck { kind: a.oracle, agrees: v == c.value, count: v.to_string() }),
    };
    let outputs = emit(&a.out, &to_json(&out))?;
    if let Some(o) = &out.oracle {
        if !o.agrees {
            return Err(CliError::Check(format!("count {} disagrees with the {:?} oracle ({})", out.count, o.kind, o.count)));
        }
    }
    Ok(Outcome { outputs, manifest: manifest_for(&a.out) })
}

#[derive(Serialize)]
struct HeightLine {
    index: usize,
    n: i64,
    /// `[i, j, H]` per lattice node.
    nodes: Vec<[i64; 3]>,
}

fn sample(a: &SampleArgs, seed: u64, inputs: &mut Vec<InputFile>) -> CliResult<Outcome> {
    let d = load_domain(&a.domain, inputs)?;
    let trajs: Vec<WalkTrajectory> = match a.method {
        Method::Exact => {
            let s = ExactSampler::new(&d)?;
            (0..a.samples as u64).into_par_iter().map(|k| s.sample(seed, k)).collect::<lozenge::Result<_>>()?
        }
        Method::Mcmc => {
            let mut chain = Mcmc::new(&d, seed)?;
            (0..a.samples)
                .map(|_| {
                    chain.run(a.sweeps);
                    chain.trajectory()
                })
                .collect()
        }
    };
    let mut buf = Vec::new();
    for (k, t) in trajs.iter().enumerate() {
        let line = match a.emit {
            Emit::Trajectories => serde_json::to_vec(t).expect("trajectory serializes"),
            Emit::Heights => {
                let g = height_from_trajectory(&d, t)?;
                let nodes = g.mesh.nodes.iter().zip(&g.heights).map(|(&(i, j), &h)| [i, j, h]).collect();
                serde_json::to_vec(&HeightLine { index: k, n: d.n(), nodes }).expect("heights serialize")
            }
        };
        buf.extend(line);
        buf.push(b'\n');
    }
    let outputs = emit(&a.out, &buf)?;
    Ok(Outcome { outputs, manifest: manifest_for(&a.out) })
}

#[derive(Serialize)]
struct LimitShapeSummary {
    functional: f64,
    residual: f64,
    newton_steps: usize,
    mesh: [i64; 2],
    refinement: i64,
    arctic_polylines: usize,
    side_distance: Vec<f64>,
}

fn limit_shape(a: &LimitShapeArgs, inputs: &mut Vec<InputFile>) -> CliResult<Outcome> {
    let d = load_domain(&a.domain, inputs)?;
    let (nx, nt) = (a.mesh[0], a.mesh[1]);
    let n = d.n();
    if nx != nt || nx < n || nx % n != 0 {
        return Err(CliError::Usage(format!(
            "--mesh {nx} {nt}: the lattice needs equal spacings, so NX = NT must be a positive multiple of n = {n}"
        )));
    }
    let bottom = a.bottom.as_ref().map(|p| read_input(p, inputs)).transpose()?;
    let bottom = bottom.map(|t| BottomHeight::from_json(&t)).transpose()?;
    let opts = SolverOptions { tolerance: a.tolerance, ..SolverOptions::default() };
    let hf = solve_variational(&d, nx / n, bottom.as_ref(), &opts)?;
    let field = gradient_to_slope(&hf, LIQUID_EPS);
    let curve = arctic_curve(&hf, &d, LIQUID_EPS);
    std::fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Io { path: a.out_dir.clone(), source })?;
    let summary = LimitShapeSummary {
        functional: hf.functional,
        residual: hf.residual,
        newton_steps: hf.newton_steps,
        mesh: [nx, nt],
        refinement: nx / n,
        arctic_polylines: curve.polylines.len(),
        side_distance: curve.side_distance.clone(),
    };
    let files = [
        ("heights.csv", hf.to_csv().into_bytes()),
        ("slope.csv", field.to_csv().into_bytes()),
        ("arctic.csv", curve.to_csv().into_bytes()),
        ("limit_shape.json", to_json(&summary)),
    ];
    let mut outputs = Vec::new();
    for (name, bytes) in files {
        let p = a.out_dir.join(name);
        write_file(&p, &bytes)?;
        outputs.push(p);
    }
    Ok(Outcome { outputs, manifest: a.out_dir.join("manifest.json") })
}

#[derive(Serialize)]
struct AnalyticityRow {
    n: i64,
    max_residue: f64,
    cancel: CancelCheck,
}

#[derive(Serialize)]
struct LoopEqReport {
    expansion: ExpansionReport,
    analyticity: Vec<AnalyticityRow>,
}

fn parse_point(s: &str) -> CliResult<Complex64> {
    let bad = || CliError::Usage(format!("bad point {s:?}: expected re:im"));
    let (re, im) = s.split_once(':').ok_or_else(bad)?;
    Ok(Complex64::new(re.trim().parse().map_err(|_| bad())?, im.trim().parse().map_err(|_| bad())?))
}

fn loopeq_verify(a: &LoopEqArgs, inputs: &mut Vec<InputFile>) -> CliResult<Outcome> {
    let profile = ParticleProfile::from_json(&read_input(&a.config, inputs)?)?;
    let w = DriftedWalkWeights::from_json(&read_input(&a.weights, inputs)?)?;
    let z = a.z.iter().map(|s| parse_point(s)).collect::<CliResult<Vec<_>>>()?;
    let expansion = expansion_report(&profile, &w, &a.n_list, &z)?;
    let analyticity = a
        .n_list
        .iter()
        .map(|&n| {
            let q = LoopQuantities::new(&profile.at(n)?, &w, n)?;
            let max_residue = analyticity_check(&q, None)?.into_iter().fold(0.0, f64::max);
            Ok(AnalyticityRow { n, max_residue, cancel: cancel_check(&q)? })
        })
        .collect::<lozenge::Result<Vec<_>>>()?;
    write_file(&a.report, &to_json(&LoopEqReport { expansion, analyticity }))?;
    Ok(Outcome { outputs: vec![a.report.clone()], manifest: sibling(&a.report, ".manifest.json") })
}

#[derive(Serialize)]
struct ProbeRow {
    #[serde(flatten)]
    stats: ProbeStats,
    centre: Option<(f64, f64)>,
    /// Distance to the arctic curve in lattice cells.
    curve_distance: Option<f64>,
    bulk: bool,
}

#[derive(Serialize)]
struct FluctuationReport {
    n: i64,
    samples: usize,
    method: SamplingMethod,
    mean_distance: f64,
    probes: Vec<ProbeRow>,
    correlation: Vec<Vec<f64>>,
    correlation_ci: Vec<Vec<[f64; 2]>>,
    covariance: Vec<CovarianceRow>,
    csv: Vec<PathBuf>,
}

/// Probes at least this many lattice cells inside the liquid region count
/// as bulk.
const BULK_CELLS: f64 = 3.0;

fn fluctuations(a: &FluctuationArgs, seed: u64, inputs: &mut Vec<InputFile>) -> CliResult<Outcome> {
    let raw = PolygonalDomain::from_json(&read_input(&a.domain, inputs)?)?;
    let d = match a.n {
        Some(n) => Domain::new(PolygonalDomain::from_vertices(n, &raw.vertices()))?,
        None => Domain::new(raw)?,
    };
    let n = d.n();
    let probes = ProbeSet::from_json(&read_input(&a.probes, inputs)?)?;
    let method = match a.method {
        Method::Exact => SamplingMethod::Exact,
        Method::Mcmc => SamplingMethod::Mcmc {
            burn_in: a.burn_in.unwrap_or(8 * (n * n) as u64),
            thin: a.thin.unwrap_or(((n * n) as u64 / 4).max(1)),
            chains: a.chains,
        },
    };
    log::info!("sampling {} tilings at n = {n}", a.samples);
    let ens = FluctuationEnsemble::generate(&d, a.samples, method, seed)?;
    log::info!("solving the limit shape");
    let hf = solve_variational(&d, 1, None, &SolverOptions::default())?;
    let curve = arctic_curve(&hf, &d, LIQUID_EPS);
    let pred = GffPredictor::new(gradient_to_slope(&hf, LIQUID_EPS));
    let report = gaussianity_report(&ens, &probes.probes)?;
    let covariance = compare_covariances(&ens, &probes.probes, &probes.pairs, &pred)?;
    let rows: Vec<ProbeRow> = probes
        .probes
        .iter()
        .zip(report.probes)
        .map(|(p, stats)| {
            let centre = p.centre();
            let curve_distance = centre.map(|(x, t)| distance_to_curve(&curve, x, t) * n as f64);
            let liquid = centre.is_some_and(|(x, t)| pred.u(x, t).is_ok());
            let bulk = liquid && curve_distance.is_some_and(|c| c >= BULK_CELLS);
            ProbeRow { stats, centre, curve_distance, bulk }
        })
        .collect();

    let mut probe_csv = String::from("label,x,t,bulk,mean,variance,skewness,excess_kurtosis,anderson_darling,p_value\n");
    for r in &rows {
        let (x, t) = r.centre.map_or((String::new(), String::new()), |(x, t)| (x.to_string(), t.to_string()));
        let s = &r.stats;
        probe_csv.push_str(&format!(
            "\"{}\",{x},{t},{},{},{},{},{},{},{}\n",
            s.label, r.bulk, s.mean, s.variance, s.skewness, s.excess_kurtosis, s.anderson_darling, s.p_value
        ));
    }
    let mut cov_csv = String::from("a,b,predicted,empirical,sigma,z_score,relative\n");
    for c in &covariance {
        cov_csv.push_str(&format!("{},{},{},{},{},{},{}\n", c.a, c.b, c.predicted, c.empirical, c.sigma, c.z_score, c.relative));
    }
    let limit = hf.heights();
    let mut mean_csv = String::from("x,t,mean_height,limit_height\n");
    for (v, &(i, j)) in ens.mesh.nodes.iter().enumerate() {
        let (x, t) = (i as f64 / n as f64, j as f64 / n as f64);
        mean_csv.push_str(&format!("{x},{t},{},{}\n", ens.mean[v] / n as f64, limit[v]));
    }
    let csv = vec![sibling(&a.out, ".probes.csv"), sibling(&a.out, ".covariance.csv"), sibling(&a.out, ".mean.csv")];
    for (p, text) in csv.iter().zip([probe_csv, cov_csv, mean_csv]) {
        write_file(p, text.as_bytes())?;
    }
    let out = FluctuationReport {
        n,
        samples: ens.len(),
        method,
        mean_distance: ens.mean_distance(&hf)?,
        probes: rows,
        correlation: report.correlation,
        correlation_ci: report.correlation_ci,
        covariance,
        csv: csv.clone(),
    };
    write_file(&a.out, &to_json(&out))?;
    let mut outputs = vec![a.out.clone()];
    outputs.extend(csv);
    Ok(Outcome { outputs, manifest: sibling(&a.out, ".manifest.json") })
}
