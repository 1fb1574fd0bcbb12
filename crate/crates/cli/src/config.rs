//! Flat key-value experiment configuration.
//!
//! One `key = value` pair per line, `#` comments, dotted section prefixes
//! (`model.`, `init.`, `sim.`, `grid.`, `pde.`, `experiment.`). The format is
//! deliberately plain: language-agnostic and diff-friendly.

use crate::{CliError, Result};
use mflab::games::{GameModel, TransitionGame, VelocityGame};
use mflab::kernels::{Kernel, ModelSpec, RateLaw, RateTable, SpatialGain};
use mflab::measures::LabelSpace;
use mflab::pde::{Grid1D, GriddedDensities};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Config {
    map: BTreeMap<String, String>,
    raw: String,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(Config {
            map,
            raw: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.require(key)?
            .parse()
            .map_err(|e| CliError::Config(format!("key `{key}`: {e}")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Config(format!("key `{key}`: {e}"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.require(key)?
            .parse()
            .map_err(|e| CliError::Config(format!("key `{key}`: {e}")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Config(format!("key `{key}`: {e}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Config(format!("key `{key}`: {e}"))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// Comma-separated list of positive integers; must be strictly
    /// increasing.
    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.require(key)?;
        let list: Vec<usize> = raw
            .split(',')
            .map(|c| {
                c.trim()
                    .parse()
                    .map_err(|e| CliError::Config(format!("key `{key}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if list.is_empty() || list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config(format!(
                "key `{key}` must be a strictly increasing list"
            )));
        }
        Ok(list)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Finite,
    Game,
}

pub fn model_kind(cfg: &Config) -> Result<ModelKind> {
    match cfg.str_or("model.kind", "finite") {
        "finite" => Ok(ModelKind::Finite),
        "game" => Ok(ModelKind::Game),
        other => Err(CliError::Config(format!("unknown model.kind `{other}`"))),
    }
}

fn kernel_from(cfg: &Config, prefix: &str) -> Result<Option<Kernel>> {
    let Some(family) = cfg.get(&format!("{prefix}.family")) else {
        return Ok(None);
    };
    let k = match family {
        "zero" => Kernel::Zero,
        "constant" => Kernel::Constant {
            drift: vec![cfg.f64(&format!("{prefix}.drift"))?],
        },
        "linear_attraction" => Kernel::LinearAttraction {
            strength: cfg.f64(&format!("{prefix}.strength"))?,
        },
        "gaussian" => Kernel::Gaussian {
            strength: cfg.f64(&format!("{prefix}.strength"))?,
            width: cfg.f64(&format!("{prefix}.width"))?,
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown kernel family `{other}` at `{prefix}`"
            )))
        }
    };
    Ok(Some(k))
}

fn rate_table_from(cfg: &Config, h: usize) -> Result<RateTable> {
    let mut table = RateTable::zero(h);
    for from in 0..h {
        for to in 0..h {
            if from == to {
                continue;
            }
            let prefix = format!("model.rate.{}.{}", from + 1, to + 1);
            let base = match cfg.get(&format!("{prefix}.base")) {
                Some(v) => v
                    .parse()
                    .map_err(|e| CliError::Config(format!("`{prefix}.base`: {e}")))?,
                None => {
                    // No keys at all means this transition is switched off.
                    let has_any = (1..=h)
                        .any(|l| cfg.get(&format!("{prefix}.influence.{l}")).is_some());
                    if !has_any {
                        continue;
                    }
                    0.0
                }
            };
            let mut influence = vec![0.0; h];
            for (l, slot) in influence.iter_mut().enumerate() {
                *slot = cfg.f64_or(&format!("{prefix}.influence.{}", l + 1), 0.0)?;
            }
            let gain = match cfg.str_or(&format!("{prefix}.gain"), "one") {
                "one" => SpatialGain::One,
                "inverse_quadratic" => SpatialGain::InverseQuadratic,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown gain `{other}` at `{prefix}.gain`"
                    )))
                }
            };
            let law = RateLaw {
                base,
                influence,
                mollifier_width: cfg.f64_or(&format!("{prefix}.mollifier_width"), 1.0)?,
                gain,
            };
            table
                .set(from, to, law)
                .map_err(CliError::Core)?;
        }
    }
    Ok(table)
}

/// Builds the finite-label model from the `model.*` section.
pub fn build_model(cfg: &Config) -> Result<ModelSpec> {
    let dim = cfg.usize_or("model.dim", 1)?;
    let h = cfg.usize("model.labels")?;
    let labels = LabelSpace::line(h);
    let rates = rate_table_from(cfg, h)?;
    match cfg.str_or("model.velocity_mode", "label_independent") {
        "label_independent" => {
            let mut kernels = Vec::with_capacity(h);
            for src in 0..h {
                let prefix = format!("model.kernel.{}", src + 1);
                let k = kernel_from(cfg, &prefix)?
                    .or(kernel_from(cfg, "model.kernel.default")?)
                    .ok_or_else(|| CliError::Config(format!("missing `{prefix}.family`")))?;
                kernels.push(k);
            }
            ModelSpec::label_independent(dim, labels, kernels, rates).map_err(CliError::Core)
        }
        "label_weighted" => {
            let mut grid = Vec::with_capacity(h * h);
            for src in 0..h {
                for own in 0..h {
                    let prefix = format!("model.kernel.{}.{}", src + 1, own + 1);
                    let k = kernel_from(cfg, &prefix)?
                        .or(kernel_from(cfg, "model.kernel.default")?)
                        .ok_or_else(|| {
                            CliError::Config(format!("missing `{prefix}.family`"))
                        })?;
                    grid.push(k);
                }
            }
            ModelSpec::label_weighted(dim, labels, grid, rates).map_err(CliError::Core)
        }
        other => Err(CliError::Config(format!(
            "unknown velocity_mode `{other}`"
        ))),
    }
}

/// Builds the continuum-label game model from the `model.*` section.
pub fn build_game(cfg: &Config) -> Result<GameModel> {
    let dim = cfg.usize_or("model.dim", 1)?;
    let nodes = cfg.usize("model.nodes")?;
    let j = match cfg.require("model.game.j.family")? {
        "zero" => TransitionGame::Zero,
        "constant" => TransitionGame::Constant {
            rate: cfg.f64("model.game.j.rate")?,
        },
        "separable_product" => TransitionGame::SeparableProduct {
            rate: cfg.f64("model.game.j.rate")?,
        },
        "recruitment" => TransitionGame::Recruitment {
            rate: cfg.f64("model.game.j.rate")?,
        },
        "gaussian_space" => TransitionGame::GaussianSpace {
            rate: cfg.f64("model.game.j.rate")?,
            width: cfg.f64("model.game.j.width")?,
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown transition game family `{other}`"
            )))
        }
    };
    let v = match cfg.require("model.game.v.family")? {
        "zero" => VelocityGame::Zero,
        "linear_attraction" => VelocityGame::LinearAttraction {
            strength: cfg.f64("model.game.v.strength")?,
        },
        "separable_attraction" => VelocityGame::SeparableAttraction {
            strength: cfg.f64("model.game.v.strength")?,
        },
        "gaussian_attraction" => VelocityGame::GaussianAttraction {
            strength: cfg.f64("model.game.v.strength")?,
            width: cfg.f64("model.game.v.width")?,
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown velocity game family `{other}`"
            )))
        }
    };
    GameModel::new(dim, nodes, j, v).map_err(CliError::Core)
}

pub fn build_grid(cfg: &Config) -> Result<Grid1D> {
    Grid1D::new(
        cfg.f64("grid.x_min")?,
        cfg.f64("grid.x_max")?,
        cfg.usize("grid.n_cells")?,
    )
    .map_err(CliError::Core)
}

/// Per-label initial spatial densities from the `init.label.<h>.*` section,
/// sampled on the grid by midpoint and normalized to total mass one.
pub fn build_initial_densities(cfg: &Config, grid: Grid1D, h: usize) -> Result<GriddedDensities> {
    let mut fields = Vec::with_capacity(h);
    for l in 0..h {
        let prefix = format!("init.label.{}", l + 1);
        let family = cfg.require(&format!("{prefix}.family"))?;
        let mass = cfg.f64_or(&format!("{prefix}.mass"), 1.0 / h as f64)?;
        let field: Vec<f64> = match family {
            "gaussian" => {
                let center = cfg.f64(&format!("{prefix}.center"))?;
                let sigma = cfg.f64(&format!("{prefix}.sigma"))?;
                (0..grid.n_cells)
                    .map(|j| {
                        let x = grid.center(j);
                        mass * (-0.5 * ((x - center) / sigma).powi(2)).exp()
                    })
                    .collect()
            }
            "uniform" => {
                let low = cfg.f64(&format!("{prefix}.low"))?;
                let high = cfg.f64(&format!("{prefix}.high"))?;
                (0..grid.n_cells)
                    .map(|j| {
                        let x = grid.center(j);
                        if x >= low && x <= high {
                            mass
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            "zero" => vec![0.0; grid.n_cells],
            other => {
                return Err(CliError::Config(format!(
                    "unknown density family `{other}` at `{prefix}`"
                )))
            }
        };
        fields.push(field);
    }
    GriddedDensities::from_unnormalized(grid, fields).map_err(CliError::Core)
}

/// Canonical `model.*` lines regenerated from a parsed model, echoed into the
/// manifest so a report pins down exactly the closure it ran.
pub fn render_model(spec: &ModelSpec) -> Vec<String> {
    use mflab::kernels::VelocityMode;
    let h = spec.label_count();
    let mut out = vec![
        "model.kind = finite".to_string(),
        format!("model.dim = {}", spec.dim()),
        format!("model.labels = {h}"),
        format!(
            "model.velocity_mode = {}",
            match spec.mode() {
                VelocityMode::LabelIndependent => "label_independent",
                VelocityMode::LabelWeighted => "label_weighted",
            }
        ),
    ];
    let render_kernel = |prefix: &str, k: &Kernel, out: &mut Vec<String>| match k {
        Kernel::Zero => out.push(format!("{prefix}.family = zero")),
        Kernel::Constant { drift } => {
            out.push(format!("{prefix}.family = constant"));
            out.push(format!("{prefix}.drift = {}", drift[0]));
        }
        Kernel::LinearAttraction { strength } => {
            out.push(format!("{prefix}.family = linear_attraction"));
            out.push(format!("{prefix}.strength = {strength}"));
        }
        Kernel::Gaussian { strength, width } => {
            out.push(format!("{prefix}.family = gaussian"));
            out.push(format!("{prefix}.strength = {strength}"));
            out.push(format!("{prefix}.width = {width}"));
        }
    };
    match spec.mode() {
        VelocityMode::LabelIndependent => {
            for src in 0..h {
                render_kernel(&format!("model.kernel.{}", src + 1), spec.kernel(src, 0), &mut out);
            }
        }
        VelocityMode::LabelWeighted => {
            for src in 0..h {
                for own in 0..h {
                    render_kernel(
                        &format!("model.kernel.{}.{}", src + 1, own + 1),
                        spec.kernel(src, own),
                        &mut out,
                    );
                }
            }
        }
    }
    for from in 0..h {
        for to in 0..h {
            if from == to || spec.rates().law(from, to).is_zero() {
                continue;
            }
            let law = spec.rates().law(from, to);
            let prefix = format!("model.rate.{}.{}", from + 1, to + 1);
            out.push(format!("{prefix}.base = {}", law.base));
            for (l, c) in law.influence.iter().enumerate() {
                if *c != 0.0 {
                    out.push(format!("{prefix}.influence.{} = {c}", l + 1));
                }
            }
            out.push(format!("{prefix}.mollifier_width = {}", law.mollifier_width));
            out.push(format!(
                "{prefix}.gain = {}",
                match law.gain {
                    SpatialGain::One => "one",
                    SpatialGain::InverseQuadratic => "inverse_quadratic",
                }
            ));
        }
    }
    out
}
