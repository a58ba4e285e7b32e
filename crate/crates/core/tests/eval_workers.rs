use hvr::diffcore::Rng;
use hvr::eval::{evaluate, EvalOptions};
use hvr::model::{prepare_env, ModelParams, Variant};
use hvr::synthgen::{generate_split, SynthConfig};

#[test]
fn worker_count_does_not_change_results() {
    let cfg = SynthConfig {
        train_episodes: 8,
        test_episodes: 37,
        ..SynthConfig::default()
    };
    let split = generate_split(&cfg).unwrap();
    let mcfg = cfg.model_config(4, 4, 2.0, 1.0, Variant::Full);
    let params = ModelParams::init(&mcfg, &mut Rng::new(11));
    let env = prepare_env(&split.test_env, &mcfg).unwrap();
    let run = |workers| {
        let opts = EvalOptions {
            workers,
            ..EvalOptions::for_model(&mcfg)
        };
        evaluate(&params, &mcfg, &split.test, &env, &opts).unwrap()
    };
    let serial = run(1);
    for workers in [2, 5, 64] {
        assert_eq!(run(workers), serial, "workers = {workers}");
    }
}
