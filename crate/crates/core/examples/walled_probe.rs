use hybplan_core::direct::plan_direct;
use hybplan_core::domains::walled_domain;
use hybplan_core::hierarchical::{
    build_confidence_map, best_representative_point, enumerate_plans, final_confidence,
    hellinger, HierarchicalConfig,
};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

fn main() {
    let spec = walled_domain();
    let model = &spec.model;
    let config = HierarchicalConfig::new(spec.transcription.clone());
    let goal_mode = model.n_modes();

    let t0 = Instant::now();
    let plans = enumerate_plans(model, goal_mode, &config).unwrap();
    println!("{} candidates, enumerate {:.2}s", plans.len(), t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let mut reps: Vec<Option<DVector<f64>>> = vec![None; model.n_modes()];
    for m in 0..model.n_modes() {
        if plans.iter().any(|p| p.sequence.contains(&m)) {
            let cmap = build_confidence_map(model, m, &config).unwrap();
            let rep = best_representative_point(&cmap);
            println!("rep mode {m}: ({:.2}, {:.2})", rep[0], rep[1]);
            reps[m] = Some(rep);
        }
    }
    println!("maps {:.2}s", t0.elapsed().as_secs_f64());

    let template = &config.transcription;
    let delta = template.segment_length().max(1);
    for plan in &plans {
        let goals: Vec<DVector<f64>> = plan.sequence.iter().map(|&m| {
            if m == goal_mode { spec.goal.center.clone() } else { reps[m].clone().unwrap() }
        }).collect();
        let per_leg = (template.horizon / goals.len().max(1)).max(config.min_subgoal_horizon);
        let horizon = per_leg.div_ceil(delta) * delta;
        let segments = horizon / delta;
        let t0 = Instant::now();
        let mut current = spec.start_belief.clone();
        let mut leginfo = String::new();
        let mut ok = true;
        for (i, g) in goals.iter().enumerate() {
            let mut leg = template.clone();
            leg.horizon = horizon;
            leg.segments = segments;
            leg.max_iterations = config.leg_max_iterations;
            if i + 1 < goals.len() {
                leg.terminal_cost = config.leg_terminal_weight * DMatrix::identity(2, 2);
            }
            match plan_direct(model, &current, g, &leg) {
                Ok(tr) => {
                    let fb = tr.final_belief().clone();
                    leginfo += &format!(" | leg{i} end({:.2},{:.2})", fb.mean()[0], fb.mean()[1]);
                    current = fb;
                }
                Err(e) => { leginfo += &format!(" | leg{i} FAIL {e}"); ok = false; break; }
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        if !ok { println!("{:?} INFEASIBLE ({dt:.2}s){leginfo}", plan.sequence); continue; }
        let conf = final_confidence(model, &current, &spec.goal, &config).unwrap();
        let mut desired = DVector::zeros(goal_mode + 1);
        desired[goal_mode] = 1.0;
        let h = hellinger(&conf, &desired).unwrap();
        let pen = config.lambda_path * (plan.sequence.len() - 1) as f64;
        let eigs = current.cov().symmetric_eigen().eigenvalues;
        let maxeig = eigs.iter().cloned().fold(f64::MIN, f64::max);
        println!(
            "{:?} h {:.4} pen {:.2} total {:.4} t {:5.2}s mean({:.2},{:.2}) maxeig {:.3} b^q [{:.2} {:.2} {:.2}]{leginfo}",
            plan.sequence, h, pen, h + pen, dt,
            current.mean()[0], current.mean()[1], maxeig,
            current.mode_probs[0], current.mode_probs[1], current.mode_probs[2]
        );
    }
}
