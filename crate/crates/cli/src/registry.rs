//! Ready-made configurations for the worked examples.

use std::f64::consts::FRAC_PI_6;

use crate::config::{
    CheckSection, CompanionName, ErrorsSection, FormName, ManifoldSection, OutputSection,
    ProjectSection, RunConfig, SdeSection, SimSection, TaylorSection,
};

pub const NAMES: [&str; 9] = [
    "circle-a-1",
    "circle-a0",
    "circle-a+1",
    "rr2-first",
    "rr2-second",
    "sphere-rotations",
    "constant-sigma",
    "identity-diffusion",
    "brownian-circle",
];

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn column(xs: &[&str]) -> Vec<Vec<String>> {
    xs.iter().map(|s| vec![s.to_string()]).collect()
}

fn thirty_degrees() -> Vec<f64> {
    vec![FRAC_PI_6.cos(), FRAC_PI_6.sin()]
}

fn base(manifold: ManifoldSection, sde: SdeSection, y0: Vec<f64>) -> RunConfig {
    RunConfig {
        manifold,
        sde,
        y0,
        sim: SimSection {
            seed: 2024,
            ..SimSection::default()
        },
        output: OutputSection::default(),
        project: ProjectSection::default(),
        errors: ErrorsSection::default(),
        taylor: TaylorSection::default(),
        check: CheckSection::default(),
    }
}

/// `σ = |x|^{2a} (x2, x1)` on the unit circle.
fn cross_diffusion(a: i32) -> RunConfig {
    let r = format!("(x1^2 + x2^2)^({a})");
    let mut cfg = base(
        ManifoldSection::Circle {},
        SdeSection {
            form: FormName::Ito,
            sigma: column(&[&format!("{r}*x2"), &format!("{r}*x1")]),
            drift: strings(["0", "0"]),
            rho: None,
        },
        thirty_degrees(),
    );
    cfg.sim.n_paths = 10_000;
    cfg.check.expect_fibering = Some(a == 0);
    cfg
}

fn x_axis() -> ManifoldSection {
    ManifoldSection::Affine {
        a: vec![vec![0.0, 1.0]],
        c: vec![0.0],
    }
}

fn rr2(sigma: [&str; 2]) -> RunConfig {
    let mut cfg = base(
        x_axis(),
        SdeSection {
            form: FormName::Ito,
            sigma: column(&sigma),
            drift: strings(["0", "0"]),
            rho: None,
        },
        vec![FRAC_PI_6.cos(), 0.0],
    );
    cfg.sim.t_max = 1.0;
    cfg.sim.stop_radius = Some(None);
    cfg.errors.checkpoint = 1.0;
    cfg.taylor.t_fit = 0.1;
    cfg
}

fn sphere_rotations() -> RunConfig {
    let r2 = "(x1^2 + x2^2 + x3^2)";
    let mut cfg = base(
        ManifoldSection::Sphere { ambient: 3 },
        SdeSection {
            form: FormName::Ito,
            sigma: vec![
                vec![format!("-2*x2/{r2}"), "0".into()],
                vec![format!("2*x1/{r2}"), format!("-2*x3/{r2}")],
                vec!["0".into(), format!("2*x2/{r2}")],
            ],
            drift: strings(["0", "0", "0"]),
            rho: None,
        },
        vec![0.0, 1.0, 0.0],
    );
    cfg.sim.t_max = 1.0;
    cfg.sim.n_paths = 2000;
    cfg.sim.stop_radius = Some(None);
    cfg.errors.companions = vec![CompanionName::ItoVector];
    cfg.errors.checkpoint = 1.0;
    cfg.taylor.t_fit = 0.1;
    cfg
}

fn constant_sigma() -> RunConfig {
    let mut cfg = base(
        ManifoldSection::Circle {},
        SdeSection {
            form: FormName::Ito,
            sigma: column(&["1", "1"]),
            drift: strings(["0", "0"]),
            rho: None,
        },
        vec![1.0, 0.0],
    );
    cfg.project.points = vec![vec![1.0, 0.0], thirty_degrees()];
    cfg
}

fn identity(y0: Vec<f64>) -> RunConfig {
    base(
        ManifoldSection::Circle {},
        SdeSection {
            form: FormName::Ito,
            sigma: vec![strings(["1", "0"]), strings(["0", "1"])],
            drift: strings(["0", "0"]),
            rho: None,
        },
        y0,
    )
}

/// The named example's configuration.
pub fn example(name: &str) -> Option<RunConfig> {
    let cfg = match name {
        "circle-a-1" => cross_diffusion(-1),
        "circle-a0" => cross_diffusion(0),
        "circle-a+1" => cross_diffusion(1),
        "rr2-first" => rr2(["x2", "x1"]),
        "rr2-second" => rr2(["0", "x1"]),
        "sphere-rotations" => sphere_rotations(),
        "constant-sigma" => constant_sigma(),
        "identity-diffusion" => identity(thirty_degrees()),
        "brownian-circle" => {
            let mut cfg = identity(vec![1.0, 0.0]);
            cfg.errors.companions = vec![CompanionName::Stratonovich, CompanionName::ItoJet];
            cfg
        }
        _ => return None,
    };
    Some(cfg)
}
