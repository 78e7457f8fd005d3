//! Multiple Coulomb scattering: radiation length, the Highland width and the
//! scattering density.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Highland constant, MeV.
pub const HIGHLAND_MEV: f64 = 13.6;
/// Radiation-length constant, g/cm^2.
pub const RADIATION_CONSTANT: f64 = 716.4;
pub const MUON_MASS_MEV: f64 = 105.658_375_5;
/// Default muon and reference momentum, MeV/c.
pub const DEFAULT_MOMENTUM_MEV: f64 = 3000.0;

const BUILTIN_TABLE: &str = include_str!("../data/materials.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub z: f64,
    /// g/mol
    pub a: f64,
    /// g/cm^3
    pub rho: f64,
    /// cm
    pub radiation_length: f64,
}

impl Material {
    pub fn new(name: impl Into<String>, z: f64, a: f64, rho: f64) -> Result<Self> {
        let radiation_length = radiation_length(z, a, rho)?;
        Ok(Material {
            name: name.into(),
            z,
            a,
            rho,
            radiation_length,
        })
    }
}

/// Radiation length in cm:
/// `716.4 A / (rho Z (Z + 1) ln(287 / sqrt(Z)))`.
pub fn radiation_length(z: f64, a: f64, rho: f64) -> Result<f64> {
    if !(z >= 1.0 && a > 0.0 && rho > 0.0) {
        return Err(Error::Domain(format!(
            "radiation length needs Z >= 1, A > 0, rho > 0 (got Z={z}, A={a}, rho={rho})"
        )));
    }
    let log_arg = 287.0 / z.sqrt();
    if log_arg <= 1.0 {
        return Err(Error::Domain(format!("ln(287/sqrt(Z)) <= 0 for Z={z}")));
    }
    Ok(RADIATION_CONSTANT * a / (rho * z * (z + 1.0) * log_arg.ln()))
}

/// Kinematics of one muon plus the reference momentum of the density scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterParams {
    /// MeV/c
    pub p: f64,
    pub beta: f64,
    /// MeV/c
    pub p0: f64,
}

impl ScatterParams {
    pub fn new(p: f64, beta: f64, p0: f64) -> Result<Self> {
        if !(p > 0.0 && beta > 0.0 && beta <= 1.0 && p0 > 0.0) {
            return Err(Error::Domain(format!(
                "scatter parameters need p > 0, 0 < beta <= 1, p0 > 0 (got {p}, {beta}, {p0})"
            )));
        }
        Ok(ScatterParams { p, beta, p0 })
    }

    /// A muon of momentum `p` with its physical velocity.
    pub fn muon(p: f64) -> Result<Self> {
        let beta = p / (p * p + MUON_MASS_MEV * MUON_MASS_MEV).sqrt();
        Self::new(p, beta, DEFAULT_MOMENTUM_MEV)
    }
}

/// Width (rad) of the projected-angle Gaussian after `length_cm` of material.
pub fn highland_sigma(params: &ScatterParams, length_cm: f64, radiation_length_cm: f64) -> f64 {
    debug_assert!(length_cm >= 0.0 && radiation_length_cm > 0.0);
    HIGHLAND_MEV / (params.beta * params.p) * (length_cm / radiation_length_cm).sqrt()
}

/// One projected scattering angle drawn from N(0, sigma^2).
pub fn sample_projected_angle<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Scattering density `(13.6 / p0)^2 / L_rad`, rad^2/cm.
pub fn scattering_density(p0: f64, radiation_length_cm: f64) -> f64 {
    (HIGHLAND_MEV / p0).powi(2) / radiation_length_cm
}

/// Materials keyed by name, loaded from `name Z A rho` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    materials: Vec<Material>,
}

impl MaterialTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TABLE).expect("builtin material table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut materials = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: String| Error::Parse {
                path: "<materials>".into(),
                line: n + 1,
                message: msg,
            };
            if fields.len() != 4 {
                return Err(bad(format!(
                    "expected `name Z A rho`, got {} fields",
                    fields.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| bad(format!("bad number {s:?}: {e}")))
            };
            let m = Material::new(fields[0], num(fields[1])?, num(fields[2])?, num(fields[3])?)
                .map_err(|e| bad(e.to_string()))?;
            materials.push(m);
        }
        Ok(MaterialTable { materials })
    }

    pub fn get(&self, name: &str) -> Option<&Material> {
        self.materials.iter().find(|m| m.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Material> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("unknown material {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Material> {
        self.materials.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn radiation_lengths_of_tungsten_and_aluminum() {
        let w = radiation_length(74.0, 183.84, 19.3).unwrap();
        let al = radiation_length(13.0, 26.98, 2.699).unwrap();
        assert!((w - 0.3505).abs() / 0.3505 < 5e-4, "{w}");
        assert!((al - 8.99).abs() / 8.99 < 5e-4, "{al}");
    }

    #[test]
    fn density_scales_radiation_length_inversely() {
        let a = radiation_length(29.0, 63.546, 8.96).unwrap();
        let b = radiation_length(29.0, 63.546, 17.92).unwrap();
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn radiation_length_domain() {
        assert!(radiation_length(0.5, 1.0, 1.0).is_err());
        assert!(radiation_length(10.0, 0.0, 1.0).is_err());
        assert!(radiation_length(10.0, 1.0, -1.0).is_err());
        // sqrt(Z) >= 287 makes the logarithm non-positive.
        assert!(radiation_length(287.0 * 287.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn highland_closed_forms() {
        let unit = ScatterParams::new(13.6, 1.0, 3000.0).unwrap();
        assert_eq!(highland_sigma(&unit, 0.0, 0.35), 0.0);
        assert!((highland_sigma(&unit, 2.5, 2.5) - 1.0).abs() < 1e-15);
        let p = ScatterParams::new(3000.0, 1.0, 3000.0).unwrap();
        let s = highland_sigma(&p, 0.4, 0.3505);
        assert!((s - 4.843e-3).abs() < 5e-7, "{s}");
    }

    #[test]
    fn scatter_params_validation() {
        assert!(ScatterParams::new(0.0, 1.0, 1.0).is_err());
        assert!(ScatterParams::new(1.0, 1.1, 1.0).is_err());
        let mu = ScatterParams::muon(3000.0).unwrap();
        assert!(mu.beta < 1.0 && mu.beta > 0.999);
    }

    #[test]
    fn scattering_density_values() {
        assert_eq!(scattering_density(13.6, 1.0), 1.0);
        let w = scattering_density(3000.0, 0.3505);
        assert!((w - 5.863e-5).abs() < 1e-8, "{w}");
        let t = MaterialTable::builtin();
        let lw = t.require("tungsten").unwrap().radiation_length;
        let lal = t.require("aluminum").unwrap().radiation_length;
        assert!(scattering_density(3000.0, lw) > scattering_density(3000.0, lal));
    }

    #[test]
    fn zero_sigma_draws_zero() {
        let mut r = rng::stream(1, "t", 0);
        assert!((0..100).all(|_| sample_projected_angle(0.0, &mut r) == 0.0));
    }

    #[test]
    fn projected_angle_moments() {
        let sigma = 4.843e-3;
        let n = 100_000;
        let mut r = rng::stream(11, "angles", 0);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_projected_angle(sigma, &mut r))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt());
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.03);
    }

    #[test]
    fn seeded_angles_repeat() {
        let a: Vec<f64> = {
            let mut r = rng::stream(5, "a", 0);
            (0..8)
                .map(|_| sample_projected_angle(1.0, &mut r))
                .collect()
        };
        let b: Vec<f64> = {
            let mut r = rng::stream(5, "a", 0);
            (0..8)
                .map(|_| sample_projected_angle(1.0, &mut r))
                .collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn table_parse_errors_carry_line_numbers() {
        let err = MaterialTable::parse("# header\nlead 82 207.2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(MaterialTable::parse("x 0 1 1").is_err());
        assert_eq!(MaterialTable::builtin().iter().count(), 7);
    }
}
