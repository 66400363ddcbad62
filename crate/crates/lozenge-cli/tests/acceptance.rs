//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any
//! criterion fails.

use lozenge::counting::{count_free_strip, count_hexagon_product, count_lgv_lattice, count_tilings, ln_biguint};
use lozenge::domain::{Domain, ParticleConfiguration, PolygonalDomain};
use lozenge::fluctuations::{
    compare_covariances, distance_to_curve, gaussianity_report, FluctuationEnsemble, GffPredictor, Probe, SamplingMethod,
};
use lozenge::limit_shape::{
    arctic_curve, burgers_residual, gradient_to_slope, solve_variational, SolverOptions, LIQUID_EPS,
};
use lozenge::loop_eq::*;
use lozenge::rational::{from_lattice, RatStr};
use lozenge::sampler::{keyed_rng, ExactSampler};
use lozenge::weights::{AnalyticFn, DriftedWalkWeights, Kappa, Poly};
use num_complex::Complex64;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

type Outcome = (bool, String);

fn hexagon(n: i64, a: i64, b: i64, c: i64) -> Domain {
    Domain::new(PolygonalDomain::hexagon(n, a, b, c)).unwrap()
}

fn counting() -> Outcome {
    let start = Instant::now();
    let mut hexagons = 0;
    for a in 1..=4 {
        for b in 1..=4 {
            for c in 1..=4 {
                let dp = count_tilings(&hexagon(1, a, b, c)).unwrap().value;
                if dp != count_hexagon_product(a as u32, b as u32, c as u32) {
                    return (false, format!("hexagon {a}x{b}x{c} disagrees"));
                }
                hexagons += 1;
            }
        }
    }
    let mut rng = keyed_rng(1, 0, 0);
    let mut strips = 0;
    while strips < 50 {
        let m = rng.gen_range(1..=4);
        let steps = rng.gen_range(1..=8);
        let pick = |rng: &mut rand_chacha::ChaCha8Rng, base: i64| {
            let mut v: Vec<i64> = Vec::new();
            while v.len() < m {
                let x = base + rng.gen_range(0..m as i64 + 4);
                if !v.contains(&x) {
                    v.push(x);
                }
            }
            v.sort_unstable();
            v
        };
        let s = pick(&mut rng, 0);
        let shift = rng.gen_range(0..=steps);
        let e = pick(&mut rng, shift);
        let dp = count_free_strip(&s, &e, steps).unwrap();
        if dp != count_lgv_lattice(&s, &e, steps).unwrap() {
            return (false, format!("strip {s:?} -> {e:?} in {steps} steps disagrees"));
        }
        strips += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    (secs < 60.0, format!("{hexagons} hexagons and {strips} strips agree in {secs:.1} s"))
}

fn uniformity() -> Outcome {
    let samples = 30_000u64;
    let mut notes = Vec::new();
    let mut ok = true;
    for (a, b, c, tilings) in [(1, 1, 2, 3usize), (2, 2, 2, 20)] {
        let d = hexagon(1, a, b, c);
        let sampler = ExactSampler::new(&d).unwrap();
        let all = sampler.enumerate(1000).unwrap();
        let index: HashMap<&Vec<Vec<i64>>, usize> = all.iter().enumerate().map(|(i, t)| (t, i)).collect();
        let mut freq = vec![0u64; all.len()];
        for k in 0..samples {
            let rows = sampler.sample(2024, k).unwrap().lattice_rows(1).unwrap();
            freq[index[&rows]] += 1;
        }
        let p = 1.0 / all.len() as f64;
        let expect = samples as f64 * p;
        let chi2: f64 = freq.iter().map(|&f| (f as f64 - expect).powi(2) / expect).sum();
        let pval = 1.0 - ChiSquared::new((all.len() - 1) as f64).unwrap().cdf(chi2);
        let sigma = (samples as f64 * p * (1.0 - p)).sqrt();
        let worst = freq.iter().map(|&f| (f as f64 - expect).abs() / sigma).fold(0.0, f64::max);
        ok &= all.len() == tilings && pval > 1e-3 && worst <= 3.0;
        notes.push(format!("{a}x{b}x{c}: {} tilings, p = {pval:.3}, max dev {worst:.2} sigma", all.len()));
    }
    (ok, notes.join("; "))
}

fn variational() -> Outcome {
    let mut gaps = Vec::new();
    for n in [4i64, 6, 8] {
        let hf = solve_variational(&hexagon(n, n, n, n), 1, None, &SolverOptions::default()).unwrap();
        let exact = ln_biguint(&count_hexagon_product(n as u32, n as u32, n as u32)) / (n * n) as f64;
        gaps.push((exact - hf.functional).abs());
    }
    let ok = gaps.windows(2).all(|w| w[1] < w[0]) && gaps[2] < 0.05;
    (ok, format!("gaps {:.4} {:.4} {:.4}", gaps[0], gaps[1], gaps[2]))
}

fn burgers() -> Outcome {
    let d = hexagon(1, 1, 1, 1);
    let disk = |x: f64, t: f64| {
        let (a, b) = (x - 1.0, t - 1.0);
        a * a - a * b + b * b < 0.35 * 0.35
    };
    let ks = [8i64, 16, 32];
    let norms: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let hf = solve_variational(&d, k, None, &SolverOptions::default()).unwrap();
            burgers_residual(&gradient_to_slope(&hf, LIQUID_EPS)).l2_norm(disk)
        })
        .collect();
    let ns: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let fit = fit_rate(&ns, &norms).unwrap();
    let ok = norms.windows(2).all(|w| w[1] < w[0]) && fit.rate >= 0.8;
    (ok, format!("norms {:.2e} {:.2e} {:.2e}, order {:.2}", norms[0], norms[1], norms[2], fit.rate))
}

fn analyticity() -> Outcome {
    let weights = [
        DriftedWalkWeights::trivial(),
        DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0),
        DriftedWalkWeights::hexagon_drift(1.5, -0.5, 0.7).with_kappa(Kappa::constant(0.5)),
        DriftedWalkWeights {
            phi_plus: AnalyticFn::poly(Poly(vec![2.0, -0.5, 0.3])),
            phi_minus: AnalyticFn { exp: Poly(vec![0.0, 0.4]), ..AnalyticFn::poly(Poly(vec![1.0, 0.4])) },
            psi_plus: AnalyticFn::poly(Poly(vec![0.2, 0.1])),
            psi_minus: AnalyticFn::poly(Poly(vec![-0.3])),
            kappa: Kappa(vec![vec![0.0, 0.0], vec![0.0, 1.0]]),
        },
    ];
    let configs: [(i64, &[i64]); 5] =
        [(6, &[2]), (8, &[0, 1, 4]), (10, &[0, 2, 3, 7]), (12, &[1, 2, 3, 5, 9]), (16, &[0, 1, 4, 6, 7, 12])];
    let mut worst = 0.0f64;
    let mut instances = 0;
    for w in &weights {
        for &(n, pos) in &configs {
            let q = LoopQuantities::new(&ParticleConfiguration::from_lattice(n, 0, pos), w, n).unwrap();
            worst = worst.max(analyticity_check(&q, None).unwrap().into_iter().fold(0.0, f64::max));
            instances += 1;
        }
    }
    let n = 8;
    let pole = 0.5 - 0.1 / n as f64;
    let bad = DriftedWalkWeights {
        phi_plus: AnalyticFn::rational(Poly(vec![0.01 - pole, 1.0]), Poly(vec![-pole, 1.0])),
        ..DriftedWalkWeights::trivial()
    };
    let q = LoopQuantities::new(&ParticleConfiguration::from_lattice(n, 0, &[0, 1, 4]), &bad, n).unwrap();
    let control = analyticity_check(&q, None).unwrap().into_iter().fold(0.0, f64::max);
    let ok = instances == 20 && worst <= 1e-10 && control > 1e-3;
    (ok, format!("max residue {worst:.1e} over {instances} instances, negative control {control:.1e}"))
}

fn expansion() -> Outcome {
    let profile = ParticleProfile::from_json(r#"{"blocks":[{"start":"0","end":"1","gap":2}]}"#).unwrap();
    let grid = [Complex64::new(0.5, 1.0), Complex64::new(1.6, 0.3)];
    let cases = [
        ("trivial", DriftedWalkWeights::trivial()),
        (
            "drift+kappa",
            DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0).with_kappa(Kappa(vec![vec![0.0, 0.0], vec![0.0, 0.3]])),
        ),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, w) in cases {
        let r = expansion_report(&profile, &w, &[8, 16, 32], &grid).unwrap();
        ok &= r.rate_first.rate >= 0.8 && r.rate_second.rate >= 1.6;
        notes.push(format!("{name}: first {:.2}, second {:.2}", r.rate_first.rate, r.rate_second.rate));
    }
    (ok, notes.join("; "))
}

fn martingale() -> Outcome {
    let n = 1000;
    let w = DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0);
    let q = LoopQuantities::new(&ParticleConfiguration::from_lattice(n, 0, &[100, 400, 750]), &w, n).unwrap();
    let pairs: Vec<(Complex64, Complex64)> = (0..10)
        .map(|k| {
            let a = Complex64::from_polar(1.2, 0.3 + 0.5 * k as f64) + 0.4;
            let b = if k % 3 == 0 { a.conj() } else { Complex64::from_polar(1.4, 1.1 - 0.4 * k as f64) + 0.4 };
            (a, b)
        })
        .collect();
    let est = martingale_cov_empirical(&q, &pairs, 100_000, 11).unwrap();
    let worst = pairs
        .iter()
        .zip(&est)
        .map(|(&(a, b), e)| e.z_score(martingale_cov_prediction(&q, a, b).unwrap()))
        .fold(0.0, f64::max);
    (worst < 3.0, format!("m = 3, 10 pairs, 1e5 steps, max z {worst:.2}"))
}

fn gaussianity() -> Outcome {
    let n = 64;
    let start = Instant::now();
    let d = hexagon(n, n, n, n);
    let method = SamplingMethod::Mcmc { burn_in: 30_000, thin: 1000, chains: 1 };
    let ens = FluctuationEnsemble::generate(&d, 2000, method, 7).unwrap();
    let hf = solve_variational(&d, 1, None, &SolverOptions::default()).unwrap();
    let curve = arctic_curve(&hf, &d, LIQUID_EPS);
    let pred = GffPredictor::new(gradient_to_slope(&hf, LIQUID_EPS));
    let pt = |x: i64, t: i64| Probe::Point { x: RatStr(from_lattice(x, n)), t: RatStr(from_lattice(t, n)), radius: 6 };
    let probes = [pt(64, 64), pt(83, 64), pt(45, 64), pt(64, 83), pt(64, 45), pt(83, 83), pt(45, 45)];
    let bulk = probes.iter().all(|p| {
        let (x, t) = p.centre().unwrap();
        pred.u(x, t).is_ok() && distance_to_curve(&curve, x, t) * n as f64 >= 3.0
    });
    let report = gaussianity_report(&ens, &probes).unwrap();
    let min_p = report.probes.iter().map(|s| s.p_value).fold(1.0, f64::min);
    let pairs = [[0, 1], [0, 2], [0, 3], [0, 4], [0, 5], [0, 6]];
    let rows = compare_covariances(&ens, &probes, &pairs, &pred).unwrap();
    let max_z = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    let max_rel = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
    let ok = bulk && min_p > 0.01 && max_z < 3.0 && max_rel < 0.15;
    let secs = start.elapsed().as_secs_f64();
    (
        ok,
        format!(
            "n = 64, 2000 samples, {} bulk probes min p {min_p:.3}; 6 pairs max |z| {max_z:.2}, max rel {max_rel:.3} ({secs:.0} s)",
            probes.len()
        ),
    )
}

fn lozenge(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_lozenge"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let write = |name: &str, text: &str| std::fs::write(d.join(name), text).unwrap();
    write("hex.json", r#"{"n":2,"vertices":[[0,0],[2,0],[4,2],[4,4],[2,4],[0,2]]}"#);
    write("profile.json", r#"{"blocks":[{"start":"0","end":"1","gap":2}]}"#);
    write("weights.json", r#"{"preset":"hexagon_drift","B":"2","A":"-1"}"#);
    let commands: [(&str, Vec<&str>, Vec<&str>); 4] = [
        ("count", vec!["count", "--domain", "hex.json", "--oracle", "product", "--out", "OUT/count.json"], vec!["count.json"]),
        (
            "sample",
            vec!["sample", "--domain", "hex.json", "--samples", "50", "--seed", "3", "--emit", "heights", "--out", "OUT/s.jsonl"],
            vec!["s.jsonl"],
        ),
        (
            "limit-shape",
            vec!["limit-shape", "--domain", "hex.json", "--mesh", "16", "16", "--out-dir", "OUT"],
            vec!["heights.csv", "slope.csv", "arctic.csv", "limit_shape.json"],
        ),
        (
            "loopeq-verify",
            vec!["loopeq-verify", "--config", "profile.json", "--weights", "weights.json", "--n-list", "4,8,12", "--report", "OUT/r.json"],
            vec!["r.json"],
        ),
    ];
    let mut checked = Vec::new();
    for (name, args, files) in &commands {
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            std::fs::create_dir_all(d.join(run)).unwrap();
            let argv: Vec<String> = args.iter().map(|s| s.replace("OUT", run)).collect();
            let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
            if !lozenge(d, &argv) {
                return (false, format!("{name} failed"));
            }
            outputs.push(files.iter().map(|f| std::fs::read(d.join(run).join(f)).unwrap()).collect::<Vec<_>>());
        }
        // Replaying the first run's manifest rewrites its outputs in place.
        let manifest = match *name {
            "limit-shape" => "a/manifest.json".to_string(),
            _ => format!("a/{}.manifest.json", files[0]),
        };
        if !lozenge(d, &["replay", &manifest]) {
            return (false, format!("{name} replay failed"));
        }
        let replayed: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(d.join("a").join(f)).unwrap()).collect();
        if outputs[0] != outputs[1] || outputs[0] != replayed {
            return (false, format!("{name} output differs between runs"));
        }
        checked.push(*name);
    }
    (true, format!("byte-identical across two runs and a manifest replay: {}", checked.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("counting oracles", counting),
        ("exact-sampler uniformity", uniformity),
        ("variational consistency", variational),
        ("Burgers residual convergence", burgers),
        ("loop-equation analyticity", analyticity),
        ("expansion rates", expansion),
        ("martingale covariance", martingale),
        ("Gaussianity at n = 64", gaussianity),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!("criterion {}: {} {name}: {detail}", k + 1, if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
