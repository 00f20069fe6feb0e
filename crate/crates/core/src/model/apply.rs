use super::{CalibrationCapture, Linear, ToyModel};
use crate::decompose::{decompose_afm, decompose_group, decompose_svd, AfmOptions, FactoredLayer, LayerGroup};
use crate::error::{LordError, Result};
use crate::planner::{CompressionPlan, Method};

/// Replace every planned projection by its factorization and return the new
/// model. Untargeted tensors are copied unchanged.
pub fn apply_plan(
    model: &ToyModel,
    plan: &CompressionPlan,
    capture: Option<&CalibrationCapture>,
    opts: AfmOptions,
) -> Result<ToyModel> {
    let mut plan_arch = plan.arch.clone();
    plan_arch.name = model.arch.name.clone();
    if plan_arch != model.arch {
        return Err(LordError::PlanMismatch(format!(
            "plan was built for `{}`, which differs from the model's architecture `{}`",
            plan.arch.name, model.arch.name
        )));
    }

    let mut out = model.clone();
    for entry in &plan.entries {
        let proj = out
            .projection_mut(&entry.target)
            .ok_or_else(|| LordError::PlanMismatch(format!("model has no projection `{}`", entry.target)))?;
        let dense = match &proj.linear {
            Linear::Dense(l) => l,
            Linear::Factored(_) => {
                return Err(LordError::PlanMismatch(format!("`{}` is already factored", entry.target)));
            }
        };
        if (dense.d1(), dense.d2()) != (entry.d1, entry.d2) {
            return Err(LordError::PlanMismatch(format!(
                "`{}` is {}x{} but the plan expects {}x{}",
                entry.target,
                dense.d1(),
                dense.d2(),
                entry.d1,
                entry.d2
            )));
        }

        let factored = match plan.method {
            Method::Svd => decompose_svd(dense, entry.rank)?,
            Method::Afm => {
                let stats = capture.and_then(|c| c.get(&entry.target)).ok_or_else(|| {
                    LordError::CalibrationInsufficient {
                        layer: entry.target.clone(),
                        reason: "no calibration statistics for this target".into(),
                    }
                })?;
                if stats.dim() != dense.d1() {
                    return Err(LordError::shape(format!(
                        "statistics for `{}` have dim {}, layer output dim is {}",
                        entry.target,
                        stats.dim(),
                        dense.d1()
                    )));
                }
                if proj.spec.members.len() > 1 {
                    let offsets = proj.spec.offsets();
                    let names = proj.spec.members.iter().map(|(m, _)| format!("{}.{m}", entry.target)).collect();
                    let biases = match &dense.bias {
                        Some(b) => offsets.windows(2).map(|w| Some(b[w[0]..w[1]].to_vec())).collect(),
                        None => vec![None; proj.spec.members.len()],
                    };
                    let group = LayerGroup::new(names, dense.w.clone(), offsets)?;
                    let members = decompose_group(&group, &biases, stats, entry.rank, opts)?;
                    FactoredLayer::stack(entry.target.clone(), &members)?
                } else {
                    decompose_afm(dense, stats, entry.rank, opts)?
                }
            }
        };
        proj.linear = Linear::Factored(factored);
    }
    Ok(out)
}
