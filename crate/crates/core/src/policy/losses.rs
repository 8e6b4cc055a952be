use crate::tensornet::{Tape, TensorResult, Var};

/// Mean over horizon rows of the per-step l1 distance between predicted and
/// target trajectory rows.
pub fn trajectory_loss(tape: &mut Tape, pred: Var, target: Var) -> TensorResult<Var> {
    tape.l1_loss(pred, target)
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub traj: Option<Var>,
    pub act: Var,
    pub total: Var,
}

/// Returns `(L_act, L_total)` with `L_total = lambda * L_traj + L_act`. A
/// missing trajectory loss contributes nothing.
pub fn action_and_total_loss(
    tape: &mut Tape,
    pred_chunk: Var,
    target_chunk: Var,
    traj_loss: Option<Var>,
    lambda: f64,
) -> TensorResult<(Var, Var)> {
    let act = tape.l1_loss(pred_chunk, target_chunk)?;
    let total = match traj_loss {
        Some(t) => {
            let weighted = tape.scale(t, lambda)?;
            tape.add(weighted, act)?
        }
        None => act,
    };
    Ok((act, total))
}
