// Scratch harness used while bringing up the runner; replaced by the real
// examples before release.
use faultline::scenario::config::parse_scenario;
use faultline::scenario::runner::run_scenario;

fn main() {
    let text = r#"
template = "line2324"
infeed_terminal1 = "gfm"
infeed_terminal2 = "sg"
priority = "positive"

[fault]
ftype = "abg"
location = 0.8
rf_ohms = 0.0
t_on = 0.6
"#;
    let sc = parse_scenario(text, "inline").expect("parse");
    let t0 = std::time::Instant::now();
    let res = run_scenario(&sc).expect("run");
    println!("elapsed: {:?}", t0.elapsed());
    println!("status: {:?}", res.status);
    println!(
        "settle: v1={:.4} v2={:.4} ok={}",
        res.summary.settle_v1_pu, res.summary.settle_v2_pu, res.summary.settle_ok
    );
    println!(
        "omega: [{:.4},{:.4}] limiter={} clamps={}",
        res.summary.omega_min, res.summary.omega_max,
        res.summary.limiter_engaged_any, res.summary.clamp_events
    );
    println!("|z1l|={:.4} pu", res.z1l_pu.norm());
    for lp in &res.summary.loops {
        println!(
            "  {:>5}: min2c={} steady={} trip={} first={:?}",
            lp.lp.label(),
            lp.min_z_mag_2cyc.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
            lp.steady_z_mag.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
            lp.tripped,
            lp.first_operate_t
        );
    }
    for d in &res.summary.diffs {
        println!(
            "  {:>5}: exc={} steady={:?} trip={} first={:?} alpha={:?}",
            d.element.label(),
            d.excursions_3cyc,
            d.steady_state.map(|s| s.label()),
            d.tripped,
            d.first_operate_t,
            d.steady_alpha
        );
    }
    let n = res.relay_samples.len();
    println!("relay samples: {n}, waveform rows: {}", res.waveforms.len());
    if let Some(s) = res.relay_samples.last() {
        println!("last sample t={:.5} settled={}", s.t, s.settled);
    }
}
