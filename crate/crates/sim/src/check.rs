//! Condition checks on a scenario, rendered as `key = value` text.

use std::fmt::Write as _;

use drkf_core::conditions::{self, ObservabilityReport, StructureReport, MU_FLOOR};

use crate::error::{SimError, SimResult};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub scenario: String,
    pub observability: ObservabilityReport,
    pub structure: StructureReport,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.observability.pass && self.structure.pass()
    }

    pub fn render(&self) -> String {
        let o = &self.observability;
        let s = &self.structure;
        let mut out = String::new();
        let _ = writeln!(out, "# finite-horizon evidence only");
        let _ = writeln!(out, "scenario = \"{}\"", self.scenario);
        let _ = writeln!(out, "\n[observability]");
        let _ = writeln!(out, "nbar = {}", o.nbar);
        let _ = writeln!(out, "windows = {}", o.starts.len());
        let _ = writeln!(out, "alpha_hat = {:e}", o.alpha_hat);
        let _ = writeln!(out, "alpha_hat_moment = {:e}", o.moment_alpha_hat);
        let _ = writeln!(out, "pass = {}", o.pass);
        let _ = writeln!(out, "\n[structure]");
        let _ = writeln!(out, "lambda1 = {:e}", s.lambda1);
        let _ = writeln!(out, "lambda2 = {:e}", s.lambda2);
        let _ = writeln!(out, "noise_times = {}", s.noise_times.len());
        let _ = writeln!(out, "vacuous = {}", s.vacuous);
        if !s.vacuous {
            let rho_max = s.rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(out, "rho_max = {rho_max:e}");
            let _ = writeln!(out, "M = {:e}", s.m);
            let _ = writeln!(out, "varrho = {:e}", s.varrho);
            let _ = writeln!(out, "sup_term = {:e}", s.sup_term);
        }
        let _ = writeln!(out, "pass_a = {}", s.pass_a);
        let _ = writeln!(out, "pass_decay = {}", s.pass_exp);
        let _ = writeln!(out, "pass_sup = {}", s.pass_sup);
        let _ = writeln!(out, "\npass = {}", self.pass());
        out
    }
}

/// Observability over every window that fits the horizon, plus the
/// structural conditions over the whole horizon.
pub fn check_scenario(scenario: &Scenario, nbar: usize) -> SimResult<CheckReport> {
    let model = &scenario.setup.model;
    let bounds = &scenario.setup.bounds;
    let horizon = model.horizon();
    if nbar > horizon {
        return Err(SimError::Invalid(format!(
            "N̄={nbar} exceeds horizon {horizon}"
        )));
    }
    Ok(CheckReport {
        scenario: scenario.name.clone(),
        observability: conditions::check_observability(model, bounds, nbar, 0..horizon - nbar + 1)?,
        structure: conditions::check_structure(model, bounds, horizon, MU_FLOOR)?,
    })
}
