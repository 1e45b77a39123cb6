use proptest::prelude::*;
use slowfast::config::{parse_config, GainRule, InitialConfig, RunConfig, StepMode, Suite};
use slowfast_core::{CouplingKind, Method, ModelKind, Strategy as Solve};

const KINDS: [ModelKind; 3] = [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr];
const COUPLINGS: [CouplingKind; 5] = [
    CouplingKind::Lattice,
    CouplingKind::Middle,
    CouplingKind::DenseInverseSquare,
    CouplingKind::Random,
    CouplingKind::TwoCluster,
];
const SUITES: [Suite; 6] = [
    Suite::ToleranceSweep,
    Suite::StepSweep,
    Suite::SizeSweep,
    Suite::CouplingSweep,
    Suite::EpsilonSweep,
    Suite::SingleRun,
];

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        (
            0..3usize,
            1..500usize,
            any::<u64>(),
            1e-4..0.5f64,
            any::<bool>(),
        ),
        (
            0..5usize,
            0.01..1.0f64,
            0.1..5.0f64,
            proptest::option::of(1..10usize),
        ),
        (
            0..4usize,
            any::<bool>(),
            proptest::option::of(0.01..5.0f64),
            1e-8..1e-2f64,
            1.0..1000.0f64,
        ),
        (
            0..6usize,
            proptest::collection::vec(1..2000usize, 1..4),
            proptest::collection::vec(1e-7..1e-2f64, 1..4),
        ),
        (
            proptest::collection::vec(0..4usize, 1..4),
            1..5usize,
            2..5000usize,
            "[a-z][a-z0-9_]{0,8}",
        ),
    )
        .prop_map(|(m, c, s, b, o)| {
            let kind = KINDS[m.0];
            let mut cfg = RunConfig::defaults(kind);
            cfg.model.n = m.1;
            cfg.model.seed = m.2;
            if m.4 {
                cfg.model.gains = GainRule::Unit;
            }
            cfg.model.params = cfg.model_params(m.1, m.3);
            cfg.coupling.kind = COUPLINGS[c.0];
            cfg.coupling.density = c.1;
            cfg.coupling.weight = c.2;
            cfg.coupling.cluster_size = c.3.map(|k| k.min(m.1));
            if kind == ModelKind::Hr {
                cfg.initial = InitialConfig::HrPerturbedPoint { width: c.1 };
            }
            cfg.solver.method = Method::ALL[s.0];
            cfg.solver.strategy = if s.1 {
                Solve::Standard
            } else {
                Solve::Economical
            };
            cfg.solver.t_end = s.4;
            cfg.solver.step = match s.2 {
                Some(h) => StepMode::Fixed(h.min(s.4)),
                None => StepMode::Adaptive,
            };
            cfg.solver.atol = s.3;
            cfg.solver.rtol = s.3 * 3.0;
            cfg.bench.suite = SUITES[b.0];
            cfg.bench.n = b.1;
            cfg.bench.tolerances = b.2.clone();
            cfg.bench.eps = b.2.iter().map(|t| t * 10.0).collect();
            cfg.bench.orders = o.0.iter().map(|&k| Method::ALL[k]).collect();
            cfg.bench.repetitions = o.1;
            cfg.output.samples = o.2;
            cfg.output.dir = format!("runs/{}", o.3).into();
            cfg
        })
        .prop_filter("valid configuration", |cfg| cfg.validate().is_ok())
}

proptest! {
    #[test]
    fn display_round_trips(cfg in arb_config()) {
        let text = cfg.to_string();
        prop_assert_eq!(parse_config(&text), Ok(cfg), "{}", text);
    }

    #[test]
    fn parser_never_panics(text in "(\\[[a-z]{1,8}\\]\n|[a-z_]{1,8} = [-0-9a-z.,e ]{0,12}\n|# .*\n|\n){0,12}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn parse_errors_point_inside_the_text(text in "(\\[[a-z]{1,8}\\]\n|[a-z_]{1,8} = [-0-9a-z.,e ]{0,12}\n){1,8}") {
        if let Err(slowfast::config::ConfigError::Parse { line, .. }) = parse_config(&text) {
            prop_assert!(line >= 1 && line <= text.lines().count());
        }
    }
}
