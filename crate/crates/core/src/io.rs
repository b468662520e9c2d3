//! JSON input files. Design files use millimetres and degrees.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GearDesign;
use crate::mesh::MeshConfig;

/// On-disk form of a [`GearDesign`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub p1: u32,
    pub p3: u32,
    pub r_o: f64,
    pub t_bi1: f64,
    pub t_pm1: f64,
    pub t_ag1: f64,
    pub t_mods: f64,
    pub t_brg: f64,
    pub t_ag2: f64,
    pub t_pm3: f64,
    pub t_bi3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack_length: Option<f64>,
    #[serde(default)]
    pub theta1_deg: f64,
    #[serde(default)]
    pub theta2_deg: f64,
    #[serde(default)]
    pub theta3_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulator_fill: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bore_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_air_factor: Option<f64>,
}

impl DesignFile {
    pub fn into_design(self) -> GearDesign {
        let mut d = GearDesign::new(
            self.p1,
            self.p3,
            self.r_o,
            [
                self.t_bi1,
                self.t_pm1,
                self.t_ag1,
                self.t_mods,
                self.t_brg,
                self.t_ag2,
                self.t_pm3,
                self.t_bi3,
            ],
        );
        d.theta1 = self.theta1_deg.to_radians();
        d.theta2 = self.theta2_deg.to_radians();
        d.theta3 = self.theta3_deg.to_radians();
        if let Some(v) = self.stack_length {
            d.stack_length = v;
        }
        if let Some(v) = self.modulator_fill {
            d.modulator_fill = v;
        }
        if let Some(v) = self.steel {
            d.steel_id = v;
        }
        if let Some(v) = self.pm {
            d.pm_id = v;
        }
        if let Some(v) = self.bore_fraction {
            d.bore_fraction = v;
        }
        if let Some(v) = self.outer_air_factor {
            d.outer_air_factor = v;
        }
        d.b_r = self.b_r;
        d.mu_r = self.mu_r;
        d
    }

    pub fn from_design(d: &GearDesign) -> Self {
        DesignFile {
            name: None,
            p1: d.p1,
            p3: d.p3,
            r_o: d.r_o,
            t_bi1: d.t_bi1,
            t_pm1: d.t_pm1,
            t_ag1: d.t_ag1,
            t_mods: d.t_mods,
            t_brg: d.t_brg,
            t_ag2: d.t_ag2,
            t_pm3: d.t_pm3,
            t_bi3: d.t_bi3,
            stack_length: Some(d.stack_length),
            theta1_deg: d.theta1.to_degrees(),
            theta2_deg: d.theta2.to_degrees(),
            theta3_deg: d.theta3.to_degrees(),
            modulator_fill: Some(d.modulator_fill),
            steel: Some(d.steel_id.clone()),
            pm: Some(d.pm_id.clone()),
            b_r: d.b_r,
            mu_r: d.mu_r,
            bore_fraction: Some(d.bore_fraction),
            outer_air_factor: Some(d.outer_air_factor),
        }
    }
}

/// Deserialises JSON text, naming the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let message = if field == "." {
            e.inner().to_string()
        } else {
            format!("field `{field}`: {}", e.inner())
        };
        Error::Parse {
            path: path.to_path_buf(),
            message,
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, path)
}

/// Parses and validates a design file.
pub fn parse_design(text: &str, path: &Path) -> Result<GearDesign> {
    let file: DesignFile = parse_json(text, path)?;
    let design = file.into_design();
    design.validate()?;
    Ok(design)
}

pub fn read_design(path: impl AsRef<Path>) -> Result<GearDesign> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design(&text, path)
}

pub fn design_to_json(design: &GearDesign) -> String {
    serde_json::to_string_pretty(&DesignFile::from_design(design)).expect("design serialises")
}

pub fn read_mesh_config(path: impl AsRef<Path>) -> Result<MeshConfig> {
    let config: MeshConfig = read_json(path)?;
    config.validate()?;
    Ok(config)
}
