//! JSON file formats shared across modules and with external tools.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward_model::{FrameStack, MeasurementTensor};
use crate::phase_space::{Configuration, Particle, TimeGrid};

/// On-disk form of a configuration:
/// `{"tau": .., "K": .., "d": .., "particles": [{"x": [..], "v": [..], "w": ..}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationFile {
    pub tau: f64,
    #[serde(rename = "K")]
    pub k_max: i64,
    pub d: usize,
    pub particles: Vec<ParticleFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleFile {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub w: f64,
}

impl From<&Configuration> for ConfigurationFile {
    fn from(cfg: &Configuration) -> Self {
        ConfigurationFile {
            tau: cfg.grid.tau,
            k_max: cfg.grid.k_max,
            d: cfg.grid.dim,
            particles: cfg
                .particles
                .iter()
                .map(|p| ParticleFile {
                    x: p.position.clone(),
                    v: p.velocity.clone(),
                    w: p.weight,
                })
                .collect(),
        }
    }
}

impl ConfigurationFile {
    pub fn into_configuration(self) -> Result<Configuration> {
        let grid = TimeGrid::new(self.k_max, self.tau, self.d)?;
        let particles = self
            .particles
            .into_iter()
            .map(|p| Particle::new(p.x, p.v, p.w))
            .collect();
        Configuration::new(particles, grid)
    }
}

pub fn write_configuration(path: &Path, cfg: &Configuration) -> Result<()> {
    let file = ConfigurationFile::from(cfg);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_configuration(path: &Path) -> Result<Configuration> {
    let text = std::fs::read_to_string(path)?;
    let file: ConfigurationFile = serde_json::from_str(&text)?;
    file.into_configuration()
}

/// On-disk form of a measurement tensor: complex pairs row-major with `k`
/// outer and `l` inner, plus the header fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementTensorFile {
    pub f_c: i64,
    #[serde(rename = "K")]
    pub k_max: i64,
    pub tau: f64,
    pub data: Vec<[f64; 2]>,
}

impl From<&MeasurementTensor> for MeasurementTensorFile {
    fn from(y: &MeasurementTensor) -> Self {
        MeasurementTensorFile {
            f_c: y.f_c,
            k_max: y.k_max,
            tau: y.tau,
            data: y.data.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl MeasurementTensorFile {
    pub fn into_tensor(self) -> Result<MeasurementTensor> {
        let expected = ((2 * self.f_c + 1) * (2 * self.k_max + 1)) as usize;
        if self.data.len() != expected {
            return Err(Error::InvalidConfiguration(format!(
                "tensor data length {} does not match header ({expected} entries)",
                self.data.len()
            )));
        }
        Ok(MeasurementTensor {
            f_c: self.f_c,
            k_max: self.k_max,
            tau: self.tau,
            data: self
                .data
                .into_iter()
                .map(|[re, im]| Complex64::new(re, im))
                .collect(),
        })
    }
}

pub fn write_tensor(path: &Path, y: &MeasurementTensor) -> Result<()> {
    let file = MeasurementTensorFile::from(y);
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<MeasurementTensor> {
    let text = std::fs::read_to_string(path)?;
    let file: MeasurementTensorFile = serde_json::from_str(&text)?;
    file.into_tensor()
}

pub fn write_frames(path: &Path, stack: &FrameStack) -> Result<()> {
    std::fs::write(path, serde_json::to_string(stack)?)?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<FrameStack> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_model::{apply_fourier, FourierOperator};

    #[test]
    fn configuration_round_trips_through_json() {
        let grid = TimeGrid::new(2, 0.5, 1).unwrap();
        let cfg = Configuration::new(
            vec![
                Particle::new_1d(0.3, 0.05, 1.1),
                Particle::new_1d(0.7, -0.02, 0.9),
            ],
            grid,
        )
        .unwrap();
        let dir = std::env::temp_dir().join("dynspike_io_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        write_configuration(&path, &cfg).unwrap();
        let back = read_configuration(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.grid, cfg.grid);
        for (a, b) in back.particles.iter().zip(&cfg.particles) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.velocity, b.velocity);
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn tensor_round_trips_and_rejects_bad_lengths() {
        let grid = TimeGrid::new(1, 0.5, 1).unwrap();
        let op = FourierOperator::new(4, grid).unwrap();
        let cfg = Configuration::new(vec![Particle::new_1d(0.4, 0.1, 1.0)], grid).unwrap();
        let y = apply_fourier(&op, &cfg).unwrap();
        let dir = std::env::temp_dir().join("dynspike_io_tensor_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("y.json");
        write_tensor(&path, &y).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back, y);

        let mut file = MeasurementTensorFile::from(&y);
        file.data.pop();
        assert!(file.into_tensor().is_err());
    }
}
