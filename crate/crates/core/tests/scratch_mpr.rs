use ecodrive_core::controller::AlgorithmVariant;
use ecodrive_core::fuel::FuelParams;
use ecodrive_core::network::{Link, Network};
use ecodrive_core::signal::SpatPlan;
use ecodrive_core::sim::{run, OdDemand, SimConfig};

fn site(offset2: f64) -> Network {
    let tl = Link::template(1, 80.0, 1600.0, 160.0);
    let mut net = Network::corridor(2, 1000.0, 500.0, 200.0, &tl).unwrap();
    net.plans.insert(0, SpatPlan::new(120.0, 61.0, 4.0, 2.0, 0.0));
    net.plans.insert(1, SpatPlan::new(120.0, 61.0, 4.0, 2.0, offset2));
    net
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn full_curves() {
    let ods = [OdDemand { origin: 0, destination: 3, demand_vphpl: 600.0 }];
    let net = site(0.0);
    let mut fuel = FuelParams::light_duty();
    fuel.alpha0 = 0.0006;
    let seeds = [1u64, 2, 3];
    let t0 = std::time::Instant::now();
    for variant in [AlgorithmVariant::ECO_MS_Q, AlgorithmVariant::ECO_1S_Q, AlgorithmVariant::ECO_MS_O, AlgorithmVariant::ECO_1S_O] {
        let mprs: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let mut savings = Vec::new();
        for &mpr in &mprs {
            let mut s = 0.0;
            for &seed in &seeds {
                let base = run(&SimConfig { horizon_s: 4200.0, seed, mpr_fraction: 0.0, fuel: fuel.clone(), ..SimConfig::default() }, &net, &ods).unwrap();
                let treat = run(&SimConfig { horizon_s: 4200.0, seed, mpr_fraction: mpr, variant, fuel: fuel.clone(), ..SimConfig::default() }, &net, &ods).unwrap();
                s += treat.metrics.savings_pct_vs(&base.metrics) / seeds.len() as f64;
            }
            savings.push(s);
        }
        let rho = spearman(&mprs, &savings);
        let line: Vec<String> = savings.iter().map(|s| format!("{s:+.1}")).collect();
        println!("{variant}: [{}] rho={rho:.3}", line.join(", "));
    }
    println!("elapsed {:?}", t0.elapsed());
}
