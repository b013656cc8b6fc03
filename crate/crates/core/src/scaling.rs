//! Normalisation constants for gate inputs.

use serde::{Deserialize, Serialize};

use crate::forcing::ForcingSeries;
use crate::node::NodeRole;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation; a zero spread falls back to 1.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std > 0.0 && std.is_finite() {
            std
        } else {
            log::warn!("constant series (mean {mean}); using unit spread");
            1.0
        };
        MeanStd { mean, std }
    }

    #[inline]
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalingSet {
    pub soil: Option<MeanStd>,
    pub routing: Option<MeanStd>,
    pub groundwater: Option<MeanStd>,
    pub precip_max: f64,
    pub pet: Option<MeanStd>,
}

impl ScalingSet {
    /// Forcing statistics over the native (non spin-up) record, no state scaling yet.
    pub fn from_forcing(series: &ForcingSeries) -> Self {
        let native = series.native_records();
        let precip_max = native.iter().map(|r| r.precip).fold(0.0, f64::max);
        let pet: Vec<f64> = native.iter().map(|r| r.pet).collect();
        ScalingSet {
            soil: None,
            routing: None,
            groundwater: None,
            precip_max: if precip_max > 0.0 { precip_max } else { 1.0 },
            pet: Some(MeanStd::of(&pet)),
        }
    }

    pub fn node(&self, role: NodeRole) -> Option<MeanStd> {
        match role {
            NodeRole::Soil => self.soil,
            NodeRole::Routing => self.routing,
            NodeRole::Groundwater => self.groundwater,
        }
    }

    pub fn set_node(&mut self, role: NodeRole, s: Option<MeanStd>) {
        match role {
            NodeRole::Soil => self.soil = s,
            NodeRole::Routing => self.routing = s,
            NodeRole::Groundwater => self.groundwater = s,
        }
    }
}
