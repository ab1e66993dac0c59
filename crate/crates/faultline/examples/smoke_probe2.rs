// Scratch probe: spectral content of the GFM filter current and LV bus
// voltage while the corridor rings.
use faultline::control::{GfmControl, GfmParams};
use faultline::limiter::PriorityMode;
use faultline::scenario::config::parse_scenario;
use faultline::scenario::template::{build_template, InfeedPlant};
use num_complex::Complex64;

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
    let mut i_a = Vec::new();
    let mut v_a = Vec::new();
    let mut m_a = Vec::new();
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
        if t_next > 0.4 {
            let (v, i) = conv.measure(&net.sys);
            i_a.push(i.a);
            v_a.push(v.a);
            m_a.push(step.modulation.a);
        }
    }
    // Exactly six cycles for leak-free bins at multiples of 10 Hz.
    let win = (6.0 / 60.0 / h) as usize;
    let take = |x: &[f64]| -> Vec<f64> { x[x.len() - win..].to_vec() };
    let dft = |x: &[f64], f_hz: f64| -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &s) in x.iter().enumerate() {
            let ph = -2.0 * std::f64::consts::PI * f_hz * (k as f64) * h;
            acc += s * Complex64::new(ph.cos(), ph.sin());
        }
        let scale = if f_hz == 0.0 { 1.0 } else { 2.0 };
        scale * acc.norm() / win as f64
    };
    for (name, x) in [("i_a", take(&i_a)), ("v_a", take(&v_a)), ("m_a", take(&m_a))] {
        print!("{name}: ");
        for f in [0.0, 20.0, 30.0, 40.0, 60.0, 120.0, 180.0, 300.0] {
            print!("{f}Hz={:.4} ", dft(&x, f));
        }
        println!();
    }
}
