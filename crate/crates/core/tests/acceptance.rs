use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakcolour::experiment::{run_experiment, run_experiment_to_dir, WARMUP_STEPS};
use weakcolour::fpe::{cubic_test_model, EquivalenceCheck};
use weakcolour::noise::default_tail_cutoff;
use weakcolour::{
    export_csv, mean_drift, ou_stats, preset, run_filter, stats_from_autocorrelation, variance_drift,
    ColouredStats, EquivalentIto, FilterMode, FilterOptions, FilterState, KineticCoefficients,
    ObservationModel, OuParams, Polynomial, SystemModel,
};

type Outcome = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn ou_moments() -> Outcome {
    let mut worst = 0.0f64;
    for (d, tau, mu1, mu2) in [(5.0, 0.005, 10.0, 0.025), (5.0, 0.001, 10.0, 0.005)] {
        let ou = OuParams::new(d, tau).map_err(|e| e.to_string())?;
        let s = ou_stats(&ou);
        if (s.mu1, s.mu2) != (mu1, mu2) {
            return Err(format!("ou_stats({d}, {tau}) = ({}, {})", s.mu1, s.mu2));
        }
        let q = stats_from_autocorrelation(&ou, default_tail_cutoff(&ou, tau), tau / 2000.0)
            .map_err(|e| e.to_string())?;
        worst = worst.max(rel(q.mu1, mu1)).max(rel(q.mu2, mu2));
    }
    if worst <= 1e-6 {
        Ok(format!("quadrature rel {worst:.1e}"))
    } else {
        Err(format!("quadrature rel {worst:.1e} > 1e-6"))
    }
}

fn drift_and_diffusion_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = vec![rng.random_range(2.0..3.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let mu1 = rng.random_range(0.1..2.0);
        let mu2 = mu1 * rng.random_range(0.0..0.01);
        let stats = ColouredStats::new(mu1, mu2).map_err(|e| e.to_string())?;
        let model = SystemModel::new(Polynomial::new(f), Polynomial::new(g));
        let eq = EquivalentIto::new(model.clone(), stats);
        let kc = KineticCoefficients::new(model, stats);
        for _ in 0..100 {
            let x = rng.random_range(-1.0..1.0);
            let eval = || -> weakcolour::Result<(f64, f64)> {
                let b = eq.b(x)?;
                Ok((rel(kc.m(x)?, eq.a(x)?), rel(kc.k(x)?, b * b)))
            };
            let (ea, eb) = eval().map_err(|e| e.to_string())?;
            worst = worst.max(ea).max(eb);
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max rel {worst:.1e} over 1000 probes"))
    } else {
        Err(format!("max rel {worst:.1e} > 1e-10"))
    }
}

fn duffing_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for id in 1..=4 {
        let params = preset(id).map_err(|e| e.to_string())?.params();
        let (m, s) = (params.model(), params.stats());
        let obs = params.observation().map_err(|e| e.to_string())?;
        for x in linspace(-3.0, 3.0, 50) {
            for p in linspace(-8.0, 1.0, 50).map(|e| 10f64.powf(e)) {
                let st = FilterState::new(0.0, x, p);
                let md = mean_drift(&m, &s, &obs, &st).map_err(|e| e.to_string())?;
                let vd = variance_drift(&m, &s, &obs, &st).map_err(|e| e.to_string())?;
                worst = worst.max(rel(md, params.mean_bracket(x, p))).max(rel(vd, params.variance_bracket(x, p)));
            }
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max rel {worst:.1e}"))
    } else {
        Err(format!("max rel {worst:.1e} > 1e-10"))
    }
}

fn classical_reduction() -> Outcome {
    let params = preset(3).map_err(|e| e.to_string())?.params();
    let (m, s) = (params.model(), params.stats());
    let obs = ObservationModel::direct(params.phi_eta).map_err(|e| e.to_string())?;
    let dt = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dz: Vec<f64> = (0..10_000).map(|_| rng.random_range(-0.05..0.05)).collect();
    let init = FilterState::new(0.0, 1.0, 0.1);
    let classical = run_filter(init, &dz, dt, &m, &s, &obs, &FilterOptions::with_mode(FilterMode::SecondOrderClassical))
        .map_err(|e| e.to_string())?;
    let zero_mu2 = ColouredStats::new(s.mu1, 0.0).map_err(|e| e.to_string())?;
    let coloured = run_filter(init, &dz, dt, &m, &zero_mu2, &obs, &FilterOptions::default()).map_err(|e| e.to_string())?;
    let same = classical.states.iter().zip(&coloured.states).all(|(a, b)| {
        a.x_hat.to_bits() == b.x_hat.to_bits() && a.p.to_bits() == b.p.to_bits() && a.t.to_bits() == b.t.to_bits()
    });
    if same && classical.states.len() == 10_001 {
        Ok("10000 steps bitwise equal".into())
    } else {
        Err("trajectories differ".into())
    }
}

fn kalman_bucy() -> Outcome {
    // dx = -λx dt + c dW, dz = x dt + dv with intensity φ
    let (lambda, c, mu1, phi, p0) = (1.0, 1.0, 1.0, 1.0, 1.0);
    let q = mu1 * c * c;
    let m = SystemModel::new(Polynomial::linear(-lambda, 0.0), Polynomial::constant(c));
    let s = ColouredStats::new(mu1, 0.0).map_err(|e| e.to_string())?;
    let obs = ObservationModel::direct(phi).map_err(|e| e.to_string())?;
    let dt = 1e-3;
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dz: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
    let run = run_filter(FilterState::new(0.0, 0.5, p0), &dz, dt, &m, &s, &obs, &FilterOptions::default())
        .map_err(|e| e.to_string())?;

    // P' = -2λP + q - P²/φ = -(P - p1)(P - p2)/φ
    let root = (lambda * lambda + q / phi).sqrt();
    let (p1, p2) = (phi * (-lambda + root), phi * (-lambda - root));
    let k0 = (p0 - p1) / (p0 - p2);
    let exact = |t: f64| {
        let e = k0 * (-2.0 * root * t).exp();
        (p1 - p2 * e) / (1.0 - e)
    };
    let worst = run
        .states
        .iter()
        .enumerate()
        .map(|(i, st)| rel(st.p, exact(i as f64 * dt)))
        .fold(0.0, f64::max);
    if worst <= 2.0 * dt {
        Ok(format!("max rel {worst:.2e} <= {:.0e}", 2.0 * dt))
    } else {
        Err(format!("max rel {worst:.2e} > {:.0e}", 2.0 * dt))
    }
}

fn stochastic_equivalence() -> Outcome {
    let ou = OuParams::new(0.01, 0.005).map_err(|e| e.to_string())?;
    let report = EquivalenceCheck::standard(ou, 1)
        .run(&cubic_test_model(-1.0))
        .map_err(|e| e.to_string())?;
    let pairs = format!(
        "L1 coloured-ito {:.4}, coloured-fpe {:.4}, ito-fpe {:.4}",
        report.l1_coloured_ito, report.l1_coloured_fpe, report.l1_ito_fpe
    );
    let model = cubic_test_model(-100.0);
    let mut distances = Vec::new();
    for tau in [0.05, 0.01, 0.002] {
        let mut check = EquivalenceCheck::standard(OuParams::new(0.1, tau).map_err(|e| e.to_string())?, 1);
        check.x0_mean = 0.0;
        distances.push(check.white_noise_distance(&model).map_err(|e| e.to_string())?);
    }
    let monotone = distances.windows(2).all(|w| w[1] < w[0]);
    let summary = format!("{pairs}; white-noise L1 {distances:.4?}");
    if report.max_l1() <= 0.05 && monotone {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn filtering_helps() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for id in 1..=4 {
        let cfg = preset(id).map_err(|e| e.to_string())?;
        let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let pass = r.filter_wins >= 95 && r.clamp_events_after_warmup == 0 && (0.3..=3.0).contains(&r.mean_nees);
        ok &= pass;
        lines.push(format!(
            "set {id}: wins {}/{}, clamps after step {WARMUP_STEPS} {}, NEES {:.2}",
            r.filter_wins, r.n_runs, r.clamp_events_after_warmup, r.mean_nees
        ));
    }
    let summary = lines.join("; ");
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = preset(2).map_err(|e| e.to_string())?;
    cfg.n_runs = 5;
    cfg.seed = 42;
    let check = EquivalenceCheck { n_paths: 2000, n_cells: 50, ..EquivalenceCheck::standard(OuParams::new(0.01, 0.005).unwrap(), 42) };
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        run_experiment_to_dir(&cfg, &out).map_err(|e| e.to_string())?;
        let report = check.run(&cubic_test_model(-1.0)).map_err(|e| e.to_string())?;
        export_csv(&report.coloured, out.join("coloured.csv")).map_err(|e| e.to_string())?;
        export_csv(&report.fpe, out.join("fpe.csv")).map_err(|e| e.to_string())?;
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let a = std::fs::read(dir.path().join("a").join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    Ok(format!("{} files byte-identical", names.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("ou moments", ou_moments),
        ("drift and diffusion identity", drift_and_diffusion_identity),
        ("duffing closed form", duffing_exactness),
        ("classical reduction", classical_reduction),
        ("kalman-bucy variance", kalman_bucy),
        ("stochastic equivalence", stochastic_equivalence),
        ("filtering helps", filtering_helps),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
