use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Lambda, Method, SolverSettings};
use crate::error::{Error, Result};
use crate::mesh::{GeometryConfig, Placement};
use crate::sim::{ConductivityTable, SimConfig};

/// Logarithmic parameter grid `10^{lo}, …, 10^{hi}` with `per_decade` points
/// per decade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo_exp: i32,
    pub hi_exp: i32,
    pub per_decade: u32,
    /// Full `λ_γ × λ_t` product for temporal methods instead of `λ_γ = λ_t`.
    pub anisotropic: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo_exp: -15,
            hi_exp: 0,
            per_decade: 1,
            anisotropic: false,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lo_exp > self.hi_exp || self.per_decade == 0 {
            return Err(Error::Config(format!(
                "grid 10^{}..10^{} with {} points per decade is empty",
                self.lo_exp, self.hi_exp, self.per_decade
            )));
        }
        Ok(())
    }

    /// Increasing grid values; whole decades are the correctly rounded
    /// literals `1e{k}`.
    pub fn values(&self) -> Vec<f64> {
        let k = self.per_decade as i32;
        (self.lo_exp * k..=self.hi_exp * k)
            .map(|j| {
                if j % k == 0 {
                    format!("1e{}", j / k).parse().expect("valid literal")
                } else {
                    10f64.powf(j as f64 / k as f64)
                }
            })
            .collect()
    }

    pub fn points(&self, method: Method) -> Vec<Lambda> {
        let v = self.values();
        if !method.is_temporal() {
            return v.iter().map(|&g| Lambda::new(g, 0.0)).collect();
        }
        if self.anisotropic {
            v.iter().flat_map(|&g| v.iter().map(move |&t| Lambda::new(g, t))).collect()
        } else {
            v.iter().map(|&g| Lambda::new(g, g)).collect()
        }
    }
}

/// Everything one experiment needs, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub methods: Vec<Method>,
    pub snr_db: Vec<f64>,
    /// Electrode count of the main experiment, also the anchor whose optimal
    /// parameters are frozen for the ablation.
    pub n_electrodes: usize,
    pub ablation_counts: Vec<usize>,
    pub placement: Placement,
    pub electrode_seed: u64,
    pub noise_seeds: Vec<u64>,
    /// Record wall-clock seconds in `metrics.csv`. Off by default so the file
    /// is reproducible byte for byte.
    pub timing: bool,
    pub geometry: GeometryConfig,
    pub sim: SimConfig,
    pub conductivity: ConductivityTable,
    pub grid: GridConfig,
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            methods: Method::ALL.to_vec(),
            snr_db: vec![50.0],
            n_electrodes: 16,
            ablation_counts: vec![4, 8, 16, 32, 64],
            placement: Placement::UniformAngle,
            electrode_seed: 0,
            noise_seeds: vec![0],
            timing: false,
            geometry: GeometryConfig::default(),
            sim: SimConfig::default(),
            conductivity: ConductivityTable::default(),
            grid: GridConfig::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.sim.validate()?;
        self.grid.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("SNR list must be nonempty and free of NaN".into()));
        }
        if self.noise_seeds.is_empty() {
            return Err(Error::Config("at least one noise seed is required".into()));
        }
        if self.n_electrodes == 0 || self.ablation_counts.contains(&0) {
            return Err(Error::Config("electrode counts must be positive".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decade_grid() {
        let g = GridConfig::default();
        let v = g.values();
        assert_eq!(v.len(), 16);
        assert_eq!(v[0], 1e-15);
        assert_eq!(v[15], 1.0);
        assert_eq!(g.points(Method::T0).len(), 16);
        assert!(g.points(Method::TVST2).iter().all(|l| l.gamma == l.t));
        let a = GridConfig {
            anisotropic: true,
            lo_exp: -2,
            ..g.clone()
        };
        assert_eq!(a.points(Method::T1ST).len(), 9);
        assert_eq!(a.points(Method::TVS1).len(), 3);
        let thirds = GridConfig {
            lo_exp: -1,
            per_decade: 3,
            ..g
        };
        assert_eq!(thirds.values().len(), 4);
        assert!((thirds.values()[1] - 10f64.powf(-2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip_and_method_tags() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml(
            "methods = [\"T0\", \"T1S\", \"T1ST\", \"TVS1\", \"TVS2\", \"TVST1\", \"TVST2\"]\nsnr_db = [20.0]\n[geometry]\nangular_resolution = 32\n",
        )
        .unwrap();
        assert_eq!(partial.methods.len(), 7);
        assert_eq!(partial.geometry.angular_resolution, 32);
        assert!(ExperimentConfig::from_toml("methods = [\"TV3\"]").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("methods = []").is_err());
    }
}
