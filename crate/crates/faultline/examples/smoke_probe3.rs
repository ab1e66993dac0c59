// Scratch probe: p-oscillation envelope over a long run.
use faultline::control::{GfmControl, GfmParams};
use faultline::limiter::PriorityMode;
use faultline::scenario::config::parse_scenario;
use faultline::scenario::template::{build_template, InfeedPlant};

fn main() {
    let text = r#"
template = "line2324"
infeed_terminal1 = "gfm"
infeed_terminal2 = "sg"
priority = "positive"
"#;
    let sc = parse_scenario(text, "inline").expect("parse");
    let mut net = build_template(&sc).expect("build");
    let h = sc.sim.h;
    let omega_nom = 2.0 * std::f64::consts::PI * 60.0;
    let mut gfm = GfmControl::new(GfmParams::default(), PriorityMode::Positive, omega_nom);

    let n = (3.0 / h) as usize;
    let mut pmin = f64::INFINITY;
    let mut pmax = f64::NEG_INFINITY;
    let mut clamps = 0u32;
    for k in 0..n {
        let t_now = k as f64 * h;
        let t_next = (k + 1) as f64 * h;
        let InfeedPlant::Converter(conv) = &net.infeed1 else { panic!() };
        let (v, i) = conv.measure(&net.sys);
        let step = gfm.step(v, i, t_now, h).expect("control");
        conv.apply_modulation(&mut net.sys, step.modulation);
        if let InfeedPlant::Thevenin(th) = &net.infeed2 {
            th.update_emfs(&mut net.sys, t_next);
        }
        net.sys.step(&[]).expect("solver");
        pmin = pmin.min(step.p_meas);
        pmax = pmax.max(step.p_meas);
        if step.clamped { clamps += 1; }
        if (k + 1) % 4000 == 0 {
            println!("t={:.2} p in [{:+.3},{:+.3}] swing={:.4} clamps={}", t_next, pmin, pmax, pmax - pmin, clamps);
            pmin = f64::INFINITY;
            pmax = f64::NEG_INFINITY;
            clamps = 0;
        }
    }
}
