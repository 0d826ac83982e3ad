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

#[test]
fn per_class_diag() {
    let ods = [OdDemand { origin: 0, destination: 3, demand_vphpl: 600.0 }];
    let net = site(0.0);
    let mut fuel = FuelParams::light_duty();
    fuel.alpha0 = 0.0006;
    for mpr in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let out = run(&SimConfig { horizon_s: 4200.0, seed: 1, mpr_fraction: mpr, variant: AlgorithmVariant::ECO_MS_Q, fuel: fuel.clone(), ..SimConfig::default() }, &net, &ods).unwrap();
        let m = &out.metrics;
        let e = &m.equipped;
        let u = &m.unequipped;
        let efpk = if e.vehicle_km > 0.0 { e.fuel_l / e.vehicle_km } else { 0.0 };
        let ufpk = if u.vehicle_km > 0.0 { u.fuel_l / u.vehicle_km } else { 0.0 };
        println!(
            "mpr {mpr:.1}: fuel/km tot {:.4} equip {:.4} unequip {:.4}  stops {:.2}  delay {:.1}  spawned {} retired {}",
            m.fuel_per_km, efpk, ufpk, m.stops_per_vehicle, m.mean_delay_s, m.spawned, m.retired
        );
    }
}
