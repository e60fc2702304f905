use hirs::synthbench::{ablation_suite, PlantedSpec};
use hirs::trainer::TrainConfig;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map(|s| s.parse().unwrap()).unwrap_or(8);
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
    let k: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let n: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(20000);
    let seeds: Vec<u64> = args.get(4).map(|s| s.split(',').map(|t| t.parse().unwrap()).collect()).unwrap_or(vec![0]);
    let lambda1: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let spec_text: String = args.get(6).cloned().unwrap_or_else(||
        "m = 10\nnoise = 0.25\nsamples_per_user = 20\ninteraction: 0,1 coeff: 3.0\ninteraction: 2,3,4 coeff: 3.0\ninteraction: 5,6 coeff: -3.0\n".to_string());
    let d: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(16);
    let lambda3: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let spec = PlantedSpec::parse(&spec_text).unwrap();
    let cfg = TrainConfig {
        d,
        k,
        hidden: 64,
        lr,
        epochs,
        batch_size: 256,
        lambda1,
        lambda3,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let report = ablation_suite(&spec, &cfg, &seeds, n).unwrap();
    println!("suite took {:?}", t.elapsed());
    println!("{:>14} {:>8} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8}",
        "variant", "acc", "rec@10", "order0", "meanord", "collapse", "recAUC", "recJac");
    for s in &report.summaries {
        println!("{:>14} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>9.4} {:>8.4} {:>8.4}",
            s.name, s.median_accuracy, s.median_recall10, s.median_order0,
            s.median_mean_order, s.median_collapse_mass, s.median_recovery_auc, s.median_recovery_jaccard);
    }
    println!("baseline AUC {:.4} jac {:.4}", report.baseline.auc, report.baseline.mean_jaccard);
    let mut fails = 0;
    for c in &report.checks {
        println!("[{}] {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        fails += usize::from(!c.pass);
    }
    println!("fails: {fails}");
}
