//! Deterministic text rendering of recorded sessions.

use mindos_core::driver::MonitorVerdict;
use mindos_core::orchestrator::CycleTrace;

pub fn render_cycle(cycle: &CycleTrace) -> String {
    let mut out = format!(
        "cycle {} (step {}/{})\n",
        cycle.cycle_index, cycle.step_count, cycle.step_limit
    );
    if let Some(perception) = &cycle.perception {
        out.push_str(&format!("  perception: {perception}\n"));
    }
    for goal in &cycle.goal_stack {
        out.push_str(&format!("  goal: {goal}\n"));
    }
    for (i, attempt) in cycle.attempts.iter().enumerate() {
        match &attempt.error {
            Some(error) => out.push_str(&format!("  attempt {}: rejected ({})\n", i + 1, error.reason.as_str())),
            None => out.push_str(&format!("  attempt {}: accepted\n", i + 1)),
        }
    }
    if let Some(directive) = &cycle.directive {
        out.push_str(&format!("  directive: {}\n", directive.to_json()));
    }
    let verdict = match &cycle.verdict {
        MonitorVerdict::Continue => "continue".to_owned(),
        MonitorVerdict::Bypass { response } => format!("bypass \"{response}\""),
        MonitorVerdict::SpawnSubgoals { goals } => format!("spawn_subgoals [{}]", goals.join(", ")),
        MonitorVerdict::Halt { reason } => format!(
            "halt {}",
            serde_json::to_value(reason)
                .expect("reason serializes")
                .as_str()
                .unwrap_or_default()
        ),
    };
    out.push_str(&format!("  verdict: {verdict}\n"));
    for effect in &cycle.effects {
        for (i, line) in effect.lines().enumerate() {
            let prefix = if i == 0 { "  effect: " } else { "          " };
            out.push_str(prefix);
            out.push_str(line.trim_start());
            out.push('\n');
        }
    }
    out
}

/// Parses a replay log (one CycleTrace per line) and renders every cycle.
pub fn render_log(text: &str) -> Result<String, String> {
    let mut out = String::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cycle: CycleTrace = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        out.push_str(&render_cycle(&cycle));
    }
    Ok(out)
}
