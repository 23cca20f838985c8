// Run individual acceptance criteria against a persistent work directory.
use lightbake::validate::{self, Ctx};
use std::path::PathBuf;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let work = args.get(1).cloned().unwrap_or_else(|| "/root/crate/target/tmp/acceptance-work".into());
    let ctx = Ctx { work_dir: PathBuf::from(work), threads: 1 };
    for id in args.iter().skip(2) {
        let report = match id.as_str() {
            "1" => validate::criterion_1_rqs(),
            "2" => validate::criterion_2_reparameterization(),
            "3" => validate::criterion_3_gradients(),
            "4" => validate::criterion_4_albedo(&ctx),
            "5" => validate::criterion_5_distribution(&ctx),
            "6" => validate::criterion_6_render_consistency(&ctx),
            "7" => validate::criterion_7_mis_oracle(&ctx),
            "8" => validate::criterion_8_variance(&ctx),
            "9" => validate::criterion_9_training_variance(&ctx),
            "10" => validate::criterion_10_separation(&ctx),
            "11" => validate::criterion_11_determinism(&ctx),
            "furnace" => validate::furnace_check(),
            other => {
                eprintln!("unknown criterion {other}");
                continue;
            }
        };
        println!("{}", report.line());
    }
}
