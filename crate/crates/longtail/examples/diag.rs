//! scratch diagnostic
use longtail::data::sample_dataset;
use longtail::experiment::{evaluate_choice, ExperimentConfig, LossChoice, TrainMode};
use longtail::family::LossFamily;

fn main() {
    let mk = |seed: u64, epochs: usize| {
        let mut c = ExperimentConfig::default();
        c.dataset.background_fraction = 0.4;
        c.stage1.epochs = epochs;
        if epochs == 24 { c.stage1.decay_milestones = vec![16, 22]; }
        c.resolved(Some(seed), None)
    };
    let run = |label: &str, family: LossFamily, mode: TrainMode, epochs: usize| {
        let mut rs = vec![];
        for seed in [1u64, 2] {
            let c = mk(seed, epochs);
            let d = sample_dataset(&c.dataset).unwrap();
            let r = evaluate_choice(&d, &c, &LossChoice { family: family.clone(), mode }).unwrap();
            rs.push((r.m_ap.unwrap(), r.ap_rare.unwrap(), r.ap_frequent.unwrap()));
        }
        let n = rs.len() as f64;
        println!("{:<18} m_ap={:.4} ap_r={:.4} ap_f={:.4}", label,
            rs.iter().map(|x| x.0).sum::<f64>()/n,
            rs.iter().map(|x| x.1).sum::<f64>()/n,
            rs.iter().map(|x| x.2).sum::<f64>()/n);
    };
    run("softmax-e2e-12", LossFamily::SoftmaxCe, TrainMode::EndToEnd, 12);
    run("softmax-e2e-24", LossFamily::SoftmaxCe, TrainMode::EndToEnd, 24);
    run("bce-e2e-24", LossFamily::Bce, TrainMode::EndToEnd, 24);
    run("bce-e2e-12", LossFamily::Bce, TrainMode::EndToEnd, 12);
    run("bce-2stage", LossFamily::Bce, TrainMode::TwoStage, 12);
    run("acsl0.7-2stage", LossFamily::Acsl { xi: 0.7 }, TrainMode::TwoStage, 12);
    run("softmax-2stage", LossFamily::SoftmaxCe, TrainMode::TwoStage, 12);
}
