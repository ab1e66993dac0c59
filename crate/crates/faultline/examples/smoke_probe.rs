// Scratch probe: step the corridor manually and dump the GFM control trace.
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

    let n = (0.5 / h) as usize;
    for k in 0..n {
        let t_now = k as f64 * h;
        let t_next = (k + 1) as f64 * h;
        let InfeedPlant::Converter(conv) = &net.infeed1 else { panic!("want converter") };
        let (v, i) = conv.measure(&net.sys);
        let step = gfm.step(v, i, t_now, h).expect("control");
        conv.apply_modulation(&mut net.sys, step.modulation);
        if let InfeedPlant::Thevenin(th) = &net.infeed2 {
            th.update_emfs(&mut net.sys, t_next);
        }
        net.sys.step(&[]).expect("solver");
        let window = (0.40..0.43).contains(&t_now);
        if (window && k % 20 == 0) || k == n - 1 {
            println!(
                "t={:.4} p={:+.3} q={:+.3} v+={:.3} v-={:.3} om={:.4} raw=({:+.2},{:+.2}) fin=({:+.2},{:+.2}) sc+={:.2} clamp={} lvrt={} th={:.3}",
                t_next,
                step.p_meas,
                step.q_meas,
                step.v_pos_mag,
                step.v_neg_mag,
                step.omega_pu,
                step.refs_raw.id_pos,
                step.refs_raw.iq_pos,
                step.refs_final.id_pos,
                step.refs_final.iq_pos,
                step.limiter.scale_pos,
                step.clamped,
                step.lvrt_active,
                step.theta % (2.0 * std::f64::consts::PI)
            );
        }
    }
}
