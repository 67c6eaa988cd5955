use gufic::audit::passivity_audit;
use gufic::config::Scenario;
use gufic::sim::simulate;

fn main() {
    let s = Scenario::load("scenarios/sphere_lowtank.json").unwrap();
    let log = simulate(&s).unwrap();
    let rep = passivity_audit(&log, 1e-3).unwrap();
    println!("lowtank worst={:.5} at t={:.3}, first={:?}", rep.worst_margin, rep.worst_margin_time, rep.first_violation_time);
    // per-step margin delta spikes
    let mut supply = 0.0;
    let mut prev_p: Option<f64> = None;
    let s0 = log.rows[0].storage_total;
    let mut prev_margin = 0.0;
    let mut flickers = 0;
    let mut prev_gamma = 0.0;
    for r in &log.rows {
        if let Some(p) = prev_p { supply += 0.5e-3 * (p + r.supply_power); }
        prev_p = Some(r.supply_power);
        let margin = r.storage_total - s0 - supply;
        let delta = margin - prev_margin;
        if delta.abs() > 5e-4 {
            println!("t={:.3} dmargin={delta:+.4} margin={margin:+.4} gamma_i={} alpha_i={:.4} Ti={:.3} K={:.4} vdstar_norm={:.3}",
                r.t, r.gamma_i, r.alpha_i, r.tank_impedance, r.kinetic, r.vd_star.0.norm());
        }
        if r.alpha_i < 0.9 && r.gamma_i != prev_gamma { flickers += 1; }
        prev_gamma = r.gamma_i;
        prev_margin = margin;
    }
    println!("gamma_i flips while alpha<0.9: {flickers}");
}
