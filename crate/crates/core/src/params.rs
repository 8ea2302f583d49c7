//! One bundle carrying every physical and controller parameter a run needs.

use crate::excitation::ExcitationParams;
use crate::integrator::SolverConfig;
use crate::mppt::MpptConfig;
use crate::powertrain::PowerParams;
use crate::sca::CapacitorBank;
use crate::sece::SeceParams;
use crate::transducer::{BoucWenParams, ElectricalParams, MechanicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HarvesterParams {
    pub mech: MechanicalParams,
    pub bw: BoucWenParams,
    pub elec: ElectricalParams,
    pub exc: ExcitationParams,
    pub sece: SeceParams,
    pub bank: CapacitorBank,
    pub power: PowerParams,
    pub mppt: MpptConfig,
    pub solver: SolverConfig,
}
