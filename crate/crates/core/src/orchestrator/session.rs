//! One session's cycle loop: pre-check, retrieval, thought assembly, step,
//! post-check, dispatch, trace.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::trace::{AttemptRecord, CycleTrace, OutputLog, TraceLog};
use super::workflow::{WorkflowOutcome, WorkflowTrace};
use super::{AgentRuntime, SessionError};
use crate::clock::Clock;
use crate::driver::{
    check_post, check_pre, compose_instructions, install_drives, GoalStack, HaltReason, MonitorVerdict, TriggerTable,
};
use crate::foundation::{ModelRegistry, TaskKind};
use crate::kernel::{Directive, OfferedAction, StoreKind};
use crate::lui::{normalize_input, plan_layout, InputEvent, LayoutPlan};
use crate::memory::ArchivedMessage;
use crate::thought_stream::step;
use crate::tools::{value_text, ChainOutcome, ToolResult};
use crate::working_memory::{assemble_thought, serialize_thought, Actor, EventKind, ShortTermStore, ThoughtInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    GoalDirected,
    SelfTaught,
}

impl std::str::FromStr for SessionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "goal_directed" => Ok(SessionMode::GoalDirected),
            "self_taught" => Ok(SessionMode::SelfTaught),
            other => Err(format!("unknown session mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Human,
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackVerdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub source: FeedbackSource,
    pub verdict: FeedbackVerdict,
    #[serde(default)]
    pub note: String,
}

/// Externally visible session state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub agent_id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub step_count: u32,
    pub step_limit: u32,
    pub goal_stack: Vec<String>,
    pub awaiting_feedback: bool,
}

/// The current task episode, from one user input to its end.
#[derive(Debug, Clone, Default)]
struct Episode {
    goal_text: Option<String>,
    directives: Vec<Directive>,
}

pub struct Session {
    pub session_id: String,
    pub agent_id: String,
    pub mode: SessionMode,
    pub short_term: ShortTermStore,
    pub goal_stack: GoalStack,
    pub trigger_table: TriggerTable,
    pub step_count: u32,
    pub status: SessionStatus,
    awaiting_feedback: bool,
    episode: Episode,
    trace: Arc<TraceLog>,
    outputs: Arc<OutputLog>,
    agent: Arc<AgentRuntime>,
    models: Arc<ModelRegistry>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("session_id", &self.session_id)
            .field("mode", &self.mode)
            .field("status", &self.status)
            .field("step_count", &self.step_count)
            .finish_non_exhaustive()
    }
}

/// What one cycle decided about continuing the loop.
struct CycleEnd {
    trace: CycleTrace,
    stop: bool,
}

impl Session {
    pub(super) fn new(
        session_id: String,
        mode: SessionMode,
        agent: Arc<AgentRuntime>,
        models: Arc<ModelRegistry>,
        clock: Arc<dyn Clock>,
        trace: Arc<TraceLog>,
        outputs: Arc<OutputLog>,
    ) -> Self {
        let config = agent.config();
        let (goal_stack, trigger_table) = install_drives(&config);
        Self {
            session_id,
            agent_id: config.agent_id.clone(),
            mode,
            short_term: ShortTermStore::default(),
            goal_stack,
            trigger_table,
            step_count: 0,
            status: SessionStatus::Idle,
            awaiting_feedback: false,
            episode: Episode::default(),
            trace,
            outputs,
            agent,
            models,
            clock,
        }
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.session_id.clone(),
            agent_id: self.agent_id.clone(),
            mode: self.mode,
            status: self.status,
            step_count: self.step_count,
            step_limit: self.agent.config().step_limit,
            goal_stack: self.goal_texts(),
            awaiting_feedback: self.awaiting_feedback,
        }
    }

    pub fn trace(&self) -> &Arc<TraceLog> {
        &self.trace
    }

    pub fn outputs(&self) -> &Arc<OutputLog> {
        &self.outputs
    }

    /// Rebuilds the trigger table from the agent's current configuration.
    pub fn reinstall_triggers(&mut self) {
        let (_, table) = install_drives(&self.agent.config());
        self.trigger_table = table;
    }

    fn goal_texts(&self) -> Vec<String> {
        self.goal_stack.open_goals().map(|g| g.text.clone()).collect()
    }

    fn record(&mut self, kind: EventKind, actor: Actor, payload: impl Into<String>) {
        let now = self.clock.now();
        self.short_term.push(kind, actor, payload, now);
    }

    fn record_conversation(&mut self, actor: Actor, text: &str) {
        self.record(EventKind::Conversation, actor, text);
        if self.agent.memory.policy().store_conversation {
            let message = ArchivedMessage {
                role: actor.as_str().to_owned(),
                text: text.to_owned(),
            };
            if let Err(e) = self.agent.memory.archive_conversation(&self.session_id, &[message]) {
                tracing::warn!(session = %self.session_id, "conversation archive failed: {e}");
            }
        }
    }

    fn emit(&mut self, text: &str, actions: &[OfferedAction]) -> Result<(), String> {
        let plan = match plan_layout(text, actions) {
            Ok(plan) => plan,
            Err(crate::lui::LuiError::DuplicateActionId(id)) => {
                let plan = plan_layout(text, &[]).map_err(|e| e.to_string())?;
                self.outputs.push(plan);
                return Err(format!("duplicate action id '{id}'; buttons dropped"));
            }
            Err(e) => return Err(e.to_string()),
        };
        self.outputs.push(plan);
        Ok(())
    }

    fn retrieve(&self, query: &str) -> Vec<String> {
        let k = self.agent.config().retrieval_k as usize;
        let mut related: Vec<String> = self
            .agent
            .memory
            .search(StoreKind::DomainKnowledge, query, k)
            .into_iter()
            .map(|hit| hit.text)
            .collect();
        let vector = self.agent.memory.embed(query);
        related.extend(
            self.agent
                .workflows
                .recall(&vector, k)
                .into_iter()
                .map(|(score, trace)| trace.render(score)),
        );
        related
    }

    fn user_profile(&self) -> Option<String> {
        if !self.agent.memory.policy().store_user_profile {
            return None;
        }
        let lines: Vec<String> = self
            .agent
            .memory
            .records()
            .into_iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        (!lines.is_empty()).then(|| lines.join("\n"))
    }

    fn agent_profile(&self) -> String {
        let config = self.agent.config();
        if config.profile.trim().is_empty() {
            format!("Name: {}", config.name)
        } else {
            format!("Name: {}\n{}", config.name, config.profile)
        }
    }

    /// One Global Workspace cycle.
    pub async fn run_cycle(&mut self, perception: Option<&str>) -> Result<CycleTrace, SessionError> {
        Ok(self.cycle(perception).await?.trace)
    }

    async fn cycle(&mut self, perception: Option<&str>) -> Result<CycleEnd, SessionError> {
        let step_limit = self.agent.config().step_limit;
        let cycle_index = self.trace.next_index();

        if let Some(text) = perception {
            if let Some(response) = check_pre(&self.trigger_table, text).map(str::to_owned) {
                let mut effects = vec![format!("bypass: responded via trigger with \"{response}\"")];
                if let Err(e) = self.emit(&response, &[]) {
                    effects.push(format!("layout error: {e}"));
                }
                self.record_conversation(Actor::Agent, &response);
                let trace = CycleTrace {
                    cycle_index,
                    perception: Some(text.to_owned()),
                    thought_text: None,
                    directive: None,
                    verdict: MonitorVerdict::Bypass { response },
                    effects,
                    attempts: Vec::new(),
                    step_count: self.step_count,
                    step_limit,
                    goal_stack: self.goal_texts(),
                };
                self.trace.append(trace.clone());
                return Ok(CycleEnd { trace, stop: true });
            }
        }

        let query = self
            .goal_stack
            .current()
            .map(|g| g.text.clone())
            .or_else(|| perception.map(str::to_owned))
            .unwrap_or_default();
        let related = self.retrieve(&query);
        let instructions = compose_instructions(&self.goal_stack);
        let user_profile = self.user_profile();
        let agent_profile = self.agent_profile();
        let thought = assemble_thought(
            &self.short_term,
            &ThoughtInputs {
                instructions: &instructions,
                perception,
                user_profile: user_profile.as_deref(),
                agent_profile: Some(&agent_profile),
                related_memory: &related,
            },
            self.clock.now(),
        )
        .map_err(|e| SessionError::Invalid(e.to_string()))?;

        let task_kind = if self.episode.directives.is_empty() && self.goal_stack.depth() == 1 {
            TaskKind::Plan
        } else {
            TaskKind::Decide
        };
        let outcome = step(&self.models, &thought, task_kind).await?;
        self.step_count += 1;
        let directive = outcome.directive.clone();
        self.episode.directives.push(directive.clone());

        let mut verdict = check_post(&directive, self.step_count, step_limit);
        // a model that only ever plans must still hit the step budget
        if matches!(verdict, MonitorVerdict::SpawnSubgoals { .. }) && self.step_count >= step_limit {
            verdict = MonitorVerdict::Halt {
                reason: HaltReason::StepLimit,
            };
        }

        let responds_on_root = matches!(directive, Directive::Respond { .. })
            && self.mode == SessionMode::SelfTaught
            && self.goal_stack.depth() == 1;
        let (effects, stop) = match &verdict {
            MonitorVerdict::Halt {
                reason: HaltReason::StepLimit,
            } => {
                self.status = SessionStatus::Halted;
                (vec![format!("halted: step limit {step_limit} reached")], true)
            }
            MonitorVerdict::Halt {
                reason: HaltReason::Finished,
            } => {
                let effects = self.dispatch(&directive).await;
                self.status = SessionStatus::Halted;
                (effects, true)
            }
            _ => {
                let effects = self.dispatch(&directive).await;
                let stop = match directive {
                    Directive::Respond { .. } if responds_on_root => {
                        self.awaiting_feedback = true;
                        true
                    }
                    Directive::Respond { .. } => self.goal_stack.is_empty(),
                    _ => false,
                };
                (effects, stop)
            }
        };

        let trace = CycleTrace {
            cycle_index,
            perception: perception.map(str::to_owned),
            thought_text: Some(serialize_thought(&thought)),
            directive: Some(directive),
            verdict,
            effects,
            attempts: outcome
                .attempts
                .into_iter()
                .map(|a| AttemptRecord {
                    completion: a.completion,
                    error: a.error,
                })
                .collect(),
            step_count: self.step_count,
            step_limit,
            goal_stack: self.goal_texts(),
        };
        self.trace.append(trace.clone());
        Ok(CycleEnd { trace, stop })
    }

    /// Applies a directive's effects. Failures become agent_action events so
    /// the model sees them in History.
    pub async fn dispatch(&mut self, directive: &Directive) -> Vec<String> {
        let mut effects = Vec::new();
        match directive {
            Directive::Respond { text, actions } => {
                match self.emit(text, actions) {
                    Ok(()) => effects.push(format!("responded: {text}")),
                    Err(e) => {
                        effects.push(format!("layout error: {e}"));
                        self.record(EventKind::AgentAction, Actor::Agent, format!("respond -> error: {e}"));
                    }
                }
                self.record_conversation(Actor::Agent, text);
                let keep_root = self.mode == SessionMode::SelfTaught && self.goal_stack.depth() == 1;
                if !keep_root {
                    if let Ok(goal) = self.goal_stack.complete_current_goal() {
                        effects.push(format!("goal satisfied: {}", goal.text));
                    }
                }
            }
            Directive::InvokeTool { tool_id, args } => {
                let args_text = serde_json::to_string(args).expect("args serialize");
                let payload = match self.agent.tools.invoke(tool_id, args).await {
                    Ok(result) => format!("invoke_tool {tool_id} {args_text} -> {}", result_text(&result)),
                    Err(e) => format!("invoke_tool {tool_id} {args_text} -> error: {e}"),
                };
                effects.push(payload.clone());
                self.record(EventKind::AgentAction, Actor::Agent, payload);
            }
            Directive::QueryMemory { store_kind, query } => {
                let k = self.agent.config().retrieval_k as usize;
                let hits = self.agent.memory.search(*store_kind, query, k);
                let mut payload = format!("query_memory {store_kind} \"{query}\" -> {} hit(s)", hits.len());
                for (i, hit) in hits.iter().enumerate() {
                    payload.push_str(&format!("\n  [{}] ({:.3}) {}", i + 1, hit.score, hit.text));
                }
                effects.push(format!("query_memory {store_kind}: {} hit(s)", hits.len()));
                self.record(EventKind::AgentAction, Actor::Agent, payload);
            }
            Directive::Plan { subgoals } => {
                let parent = match self.goal_stack.current() {
                    Some(goal) => goal.goal_id.clone(),
                    None => self.goal_stack.set_root_goal(format!("Plan: {}", subgoals.join("; "))),
                };
                let payload = match self.goal_stack.push_subgoals(subgoals, &parent) {
                    Ok(()) => format!("plan: {}", subgoals.join(" | ")),
                    Err(e) => format!("plan -> error: {e}"),
                };
                effects.push(payload.clone());
                self.record(EventKind::AgentAction, Actor::Agent, payload);
            }
            Directive::Chain { steps } => {
                let payload = match self.agent.tools.run_chain(steps).await {
                    Ok(outcome) => chain_text(&outcome),
                    Err(e) => format!("chain -> error: {e}"),
                };
                effects.push(payload.clone());
                self.record(EventKind::AgentAction, Actor::Agent, payload);
            }
            Directive::Finish { result } => {
                if !result.trim().is_empty() {
                    if let Err(e) = self.emit(result, &[]) {
                        effects.push(format!("layout error: {e}"));
                    }
                    self.record_conversation(Actor::Agent, result);
                }
                effects.push(format!("finished: {result}"));
                if let Ok(goal) = self.goal_stack.complete_current_goal() {
                    effects.push(format!("goal satisfied: {}", goal.text));
                }
            }
        }
        effects
    }

    async fn run_until_stop(&mut self, first_perception: Option<String>) -> Result<(), SessionError> {
        self.status = SessionStatus::Running;
        let mut perception = first_perception;
        loop {
            let end = match self.cycle(perception.take().as_deref()).await {
                Ok(end) => end,
                Err(e) => {
                    self.status = SessionStatus::Idle;
                    return Err(e);
                }
            };
            if end.stop {
                break;
            }
        }
        if self.status == SessionStatus::Running {
            self.status = SessionStatus::Idle;
        }
        Ok(())
    }

    /// Starts a new task episode from a user input and runs cycles until a
    /// bypass, a halt, or a final response.
    pub async fn submit_event(&mut self, event: &InputEvent) -> Result<Vec<LayoutPlan>, SessionError> {
        if self.status == SessionStatus::Halted {
            return Err(SessionError::SessionHalted);
        }
        let start = self.outputs.len();
        let perception = normalize_input(event);
        match event {
            InputEvent::Utterance { text } => self.record_conversation(Actor::User, text),
            _ => self.record(EventKind::UserAction, Actor::User, perception.clone()),
        }
        self.goal_stack.clear_goals();
        self.goal_stack.set_root_goal(perception.clone());
        self.step_count = 0;
        self.awaiting_feedback = false;
        self.episode = Episode {
            goal_text: Some(perception.clone()),
            directives: Vec::new(),
        };
        self.run_until_stop(Some(perception)).await?;
        Ok(self.outputs.since(start))
    }

    /// Accept ends the episode successfully and stores its workflow; reject
    /// resumes iteration on the same goal.
    pub async fn apply_feedback(&mut self, feedback: &Feedback) -> Result<Vec<LayoutPlan>, SessionError> {
        if self.mode != SessionMode::SelfTaught {
            return Err(SessionError::WrongMode);
        }
        if self.status == SessionStatus::Halted {
            return Err(SessionError::SessionHalted);
        }
        let verdict = match feedback.verdict {
            FeedbackVerdict::Accept => "accept",
            FeedbackVerdict::Reject => "reject",
        };
        let payload = if feedback.note.trim().is_empty() {
            format!("feedback ({verdict})")
        } else {
            format!("feedback ({verdict}): {}", feedback.note)
        };
        match feedback.source {
            FeedbackSource::Human => self.record(EventKind::UserAction, Actor::User, payload),
            FeedbackSource::Tool => self.record(EventKind::AgentAction, Actor::System, payload),
        }
        self.awaiting_feedback = false;

        let start = self.outputs.len();
        match feedback.verdict {
            FeedbackVerdict::Accept => {
                while self.goal_stack.complete_current_goal().is_ok() {}
                self.persist_workflow();
                self.status = SessionStatus::Halted;
            }
            FeedbackVerdict::Reject => {
                if self.goal_stack.is_empty() {
                    if let Some(goal) = self.episode.goal_text.clone() {
                        self.goal_stack.set_root_goal(goal);
                    }
                }
                if self.step_count >= self.agent.config().step_limit {
                    self.status = SessionStatus::Running;
                    return Ok(Vec::new());
                }
                self.run_until_stop(None).await?;
                if self.status == SessionStatus::Idle && !self.awaiting_feedback {
                    self.status = SessionStatus::Running;
                }
            }
        }
        Ok(self.outputs.since(start))
    }

    /// Stores the current episode as a learned workflow. Returns `None` when
    /// the episode has no goal.
    pub fn persist_workflow(&mut self) -> Option<WorkflowTrace> {
        let goal_text = self.episode.goal_text.clone()?;
        let workflows = &self.agent.workflows;
        let trace = WorkflowTrace {
            trace_id: workflows.next_trace_id(),
            goal_vector: self.agent.memory.embed(&goal_text),
            goal_text,
            steps: self
                .episode
                .directives
                .iter()
                .filter(|d| !matches!(d, Directive::Respond { .. }))
                .cloned()
                .collect(),
            outcome: WorkflowOutcome::Success,
            created_at: self.clock.now(),
        };
        workflows.add(trace.clone());
        Some(trace)
    }
}

fn result_text(result: &ToolResult) -> String {
    let fields: Vec<String> = result
        .fields
        .iter()
        .map(|(k, v)| format!("{k}={}", value_text(v)))
        .collect();
    if result.is_ok() {
        format!("ok {}", fields.join(", "))
    } else if fields.is_empty() {
        format!("error: {}", result.raw)
    } else {
        format!("error: incomplete output {}", fields.join(", "))
    }
}

fn chain_text(outcome: &ChainOutcome) -> String {
    let mut text = String::from("chain:");
    for (i, (step, result)) in outcome.completed.iter().enumerate() {
        text.push_str(&format!(
            "\n  step {} {} -> {}",
            i + 1,
            step.tool_id,
            result_text(result)
        ));
    }
    match outcome.failed_at {
        Some(index) => text.push_str(&format!("\n  aborted at step {}", index + 1)),
        None => text.push_str("\n  completed"),
    }
    text
}
