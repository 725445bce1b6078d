use hybplan_core::direct::{mlo_rollout, objective, plan_direct, BeliefTrajectory};
use hybplan_core::domains::walled_domain;
use nalgebra::DVector;

fn shoot(spec: &hybplan_core::domains::DomainSpec, controls: &[DVector<f64>]) -> f64 {
    let beliefs = mlo_rollout(&spec.model, &spec.start_belief, controls, &spec.transcription.filter).unwrap();
    // knots at every segment boundary (delta = 2)
    let delta = spec.transcription.segment_length();
    let mut knots = Vec::new();
    for (i, b) in beliefs.iter().enumerate() {
        if i % delta == 0 {
            let u = if i < controls.len() { controls[i].clone() } else { DVector::zeros(2) };
            knots.push((b.clone(), u));
        }
    }
    let tr = BeliefTrajectory { knots, dense: vec![(beliefs.last().unwrap().clone(), DVector::zeros(2))], objective_value: 0.0 };
    objective(&tr, &spec.transcription)
}

fn main() {
    let spec = walled_domain();
    let tr = plan_direct(&spec.model, &spec.start_belief, &spec.goal.center, &spec.transcription).unwrap();
    let controls = tr.step_controls();
    println!("controls: {:?}", controls.iter().map(|u| (u[0]*100.0).round()/100.0).collect::<Vec<_>>());
    let j0 = shoot(&spec, &controls);
    println!("J(u*) shooting = {j0:.2} (solver obj {:.2})", tr.objective_value);
    // push the last 4 steps toward the goal a bit
    for scale in [0.02, 0.1, 0.3] {
        let mut tweaked = controls.clone();
        let fb = tr.final_belief().mean();
        let dir = (DVector::from_vec(vec![0.0, 0.0]) - &fb).normalize();
        let n = tweaked.len();
        for k in n-4..n { tweaked[k] = &tweaked[k] + scale * &dir; }
        println!("push last4 by {scale}: J = {:.2} (delta {:+.2})", shoot(&spec, &tweaked), shoot(&spec, &tweaked) - j0);
    }
}
