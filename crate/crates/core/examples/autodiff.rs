//! Reverse-mode tape on a small regression problem: gradient check, then a
//! few AdamW steps with warmup and cosine decay.

use se3policy::tensornet::{
    adamw_step, grad_check_params, AdamWConfig, InitScheme, OptimizerState, ParamSet, Precision, Tape, Tensor, GRAD_CHECK_STEP,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ps = ParamSet::new(0);
    let w = ps.add("w", 3, 1, InitScheme::FanInUniform)?;
    let x = Tensor::matrix(4, 3, vec![1.0, 0.5, -0.2, 0.3, -1.0, 0.8, -0.5, 0.2, 0.1, 0.9, 0.4, -0.7])?;
    let y = Tensor::matrix(4, 1, vec![0.4, -0.6, 0.1, 0.5])?;

    let loss = |tape: &mut Tape, ps: &ParamSet| {
        let xv = tape.constant(x.clone())?;
        let yv = tape.constant(y.clone())?;
        let wv = tape.param(ps, w)?;
        let pred = tape.matmul(xv, wv)?;
        tape.l1_loss(pred, yv)
    };

    let report = grad_check_params(&ps, loss, GRAD_CHECK_STEP)?;
    println!("gradient check: max relative error {:.2e} over {} coordinates", report.max_rel_error, report.checked);

    let cfg = AdamWConfig { lr: 0.05, warmup_steps: 5, total_steps: 60, ..AdamWConfig::default() };
    let mut opt = OptimizerState::new(cfg, &ps);
    for step in 1..=60 {
        let mut tape = Tape::new(Precision::F64);
        let l = loss(&mut tape, &ps)?;
        let value = tape.value(l).item();
        let grads = tape.backward(l)?.params(&ps);
        let lr = adamw_step(&mut ps, &grads, &mut opt)?;
        if step % 10 == 0 {
            println!("step {step:>2}: loss {value:.4}, lr {lr:.4}");
        }
    }
    Ok(())
}
