use alloc::vec::Vec;

use super::{lls_points, resolve, LocateError, PositionEstimate, RangeObs, SolverParams};
use crate::channel::ToaMeasurement;
use crate::raypath::{virtual_anchor, Mechanism};
use crate::scene::{AnchorSpec, BuildingModel};

/// Least squares over real anchors (LoS, transmission) and virtual anchors
/// (reflections), using each measurement's mechanism label.
pub fn mechanism_ls(
    measurements: &[ToaMeasurement],
    anchors: &[AnchorSpec],
    building: &BuildingModel,
    params: &SolverParams,
) -> Result<PositionEstimate, LocateError> {
    params.validate()?;
    let base = resolve(measurements, anchors)?;
    let obs = measurements
        .iter()
        .zip(base)
        .map(|(m, o)| match &m.true_mechanism {
            Some(Mechanism::LineOfSight) | Some(Mechanism::Transmission { .. }) => Ok(o),
            Some(Mechanism::Reflection { panel_ids }) => {
                let panels = panel_ids
                    .iter()
                    .map(|id| building.wall(id).ok_or_else(|| LocateError::UnknownPanel(id.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(RangeObs { anchor: virtual_anchor(&o.anchor, &panels), ..o })
            }
            _ => Err(LocateError::UnsupportedMechanism(m.anchor_id.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    lls_points(&obs, "mech-ls")
}
