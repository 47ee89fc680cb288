mod common;

use common::{engine, script};
use futures::StreamExt;
use mindos_core::driver::{HaltReason, MonitorVerdict};
use mindos_core::kernel::{AgentConfig, Directive, MatchMode, StoreKind, Trigger};
use mindos_core::lui::{InputEvent, LayoutPlan};
use mindos_core::orchestrator::{Feedback, FeedbackSource, FeedbackVerdict, SessionError, SessionMode, SessionStatus};

fn texts(plans: &[LayoutPlan]) -> Vec<&str> {
    plans.iter().filter_map(LayoutPlan::text).collect()
}

const QUERY: &str = r#"{"action":"query_memory","store":"domain_knowledge","query":"capital of France"}"#;
const ANSWER: &str = r#"{"action":"respond","text":"The capital of France is Paris."}"#;

#[tokio::test]
async fn short_round_qa_takes_two_cycles() {
    let (engine, agent) = engine(
        AgentConfig::new("geo"),
        script(&[(0, "[agent_action] query_memory", ANSWER)], Some(QUERY)),
    );
    agent
        .memory
        .ingest_document(StoreKind::DomainKnowledge, "france", "Paris is the capital of France.")
        .unwrap();
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    let outputs = engine
        .submit_event(&sid, &InputEvent::utterance("What is the capital of France?"))
        .await
        .unwrap();

    // cycle 1: no query in History yet, default → query_memory
    // cycle 2: History shows the query → respond on root, stack empties
    assert_eq!(engine.models().total_calls(), 2);
    assert_eq!(texts(&outputs), ["The capital of France is Paris."]);
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.len(), 2);
    assert!(trace[1]
        .thought_text
        .as_deref()
        .unwrap()
        .contains("query_memory domain_knowledge \"capital of France\" -> 1 hit(s)"));
    let info = engine.session_info(&sid).await.unwrap();
    assert_eq!(info.status, SessionStatus::Idle);
    assert_eq!(info.step_count, 2);
    assert!(info.goal_stack.is_empty());
}

#[tokio::test]
async fn workflow_scenario_plans_then_finishes() {
    let (engine, _) = engine(
        AgentConfig::new("travel"),
        script(
            &[
                (
                    0,
                    "current goal: book flight",
                    r#"{"action":"respond","text":"Flight booked."}"#,
                ),
                (
                    1,
                    "current goal: book hotel",
                    r#"{"action":"respond","text":"Hotel booked."}"#,
                ),
                (
                    2,
                    "agent: hotel booked.",
                    r#"{"action":"finish","result":"Trip booked."}"#,
                ),
            ],
            Some(r#"{"action":"plan","subgoals":["book flight","book hotel"]}"#),
        ),
    );
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    let outputs = engine
        .submit_event(&sid, &InputEvent::utterance("Book a trip to Rome"))
        .await
        .unwrap();

    assert_eq!(engine.models().total_calls(), 4);
    assert_eq!(texts(&outputs), ["Flight booked.", "Hotel booked.", "Trip booked."]);
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.iter().map(|t| t.cycle_index).collect::<Vec<_>>(), [0, 1, 2, 3]);
    assert_eq!(
        trace[0].goal_stack,
        ["book flight", "book hotel", "Book a trip to Rome"]
    );
    assert_eq!(
        trace[3].verdict,
        MonitorVerdict::Halt {
            reason: HaltReason::Finished
        }
    );
    let session = engine.session(&sid).unwrap();
    let session = session.lock().await;
    assert!(session.goal_stack.is_empty());
    let satisfied: Vec<&str> = session.goal_stack.satisfied().iter().map(|g| g.text.as_str()).collect();
    assert_eq!(satisfied, ["book flight", "book hotel", "Book a trip to Rome"]);
    assert_eq!(session.status, SessionStatus::Halted);
}

#[tokio::test]
async fn never_finishing_provider_halts_at_step_limit() {
    let (engine, _) = engine(AgentConfig::new("loop"), script(&[], Some(QUERY)));
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine
        .submit_event(&sid, &InputEvent::utterance("keep going"))
        .await
        .unwrap();
    assert_eq!(engine.models().total_calls(), 20);
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.len(), 20);
    assert_eq!(
        trace.last().unwrap().verdict,
        MonitorVerdict::Halt {
            reason: HaltReason::StepLimit
        }
    );
    assert!(matches!(
        engine.submit_event(&sid, &InputEvent::utterance("again")).await,
        Err(SessionError::SessionHalted)
    ));
}

#[tokio::test]
async fn endless_planning_still_halts() {
    let mut config = AgentConfig::new("planner");
    config.step_limit = 5;
    let (engine, _) = engine(config, script(&[], Some(r#"{"action":"plan","subgoals":["more"]}"#)));
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine.submit_event(&sid, &InputEvent::utterance("go")).await.unwrap();
    assert_eq!(engine.models().total_calls(), 5);
}

#[tokio::test]
async fn reactive_trigger_bypasses_model_and_tools() {
    let mut config = AgentConfig::new("guard");
    config.triggers = vec![Trigger::new(
        "stop",
        "emergency stop",
        MatchMode::Substring,
        "Stopping now.",
    )];
    let (engine, agent) = engine(config, script(&[], Some(ANSWER)));
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    let outputs = engine
        .submit_event(&sid, &InputEvent::utterance("EMERGENCY   stop please"))
        .await
        .unwrap();
    assert_eq!(texts(&outputs), ["Stopping now."]);
    assert_eq!(engine.models().total_calls(), 0);
    assert_eq!(agent.tools.total_invocations(), 0);
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.len(), 1);
    assert_eq!(
        trace[0].verdict,
        MonitorVerdict::Bypass {
            response: "Stopping now.".into()
        }
    );
    assert!(trace[0].thought_text.is_none());

    // a non-matching input reaches the model
    engine
        .submit_event(&sid, &InputEvent::utterance("hello"))
        .await
        .unwrap();
    assert_eq!(engine.models().total_calls(), 1);
}

#[tokio::test]
async fn trigger_update_applies_to_live_session() {
    let (engine, _) = engine(AgentConfig::new("t"), script(&[], Some(ANSWER)));
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine
        .update_triggers("a1", vec![Trigger::new("hi", "hi", MatchMode::Exact, "Hello!")])
        .await
        .unwrap();
    let outputs = engine.submit_event(&sid, &InputEvent::utterance("Hi")).await.unwrap();
    assert_eq!(texts(&outputs), ["Hello!"]);
    assert_eq!(engine.models().total_calls(), 0);
    let dup = vec![
        Trigger::new("x", "a", MatchMode::Exact, "r"),
        Trigger::new("x", "b", MatchMode::Exact, "r"),
    ];
    assert!(matches!(
        engine.update_triggers("a1", dup).await,
        Err(SessionError::Invalid(_))
    ));
}

fn party_script() -> mindos_core::foundation::Script {
    script(
        &[
            (
                0,
                "learned workflow",
                r#"{"action":"respond","text":"Here is the party plan."}"#,
            ),
            (
                1,
                "current goal: book venue",
                r#"{"action":"respond","text":"Venue booked."}"#,
            ),
            (
                2,
                "current goal: send invitations",
                r#"{"action":"respond","text":"Invitations sent."}"#,
            ),
            (
                3,
                "agent: invitations sent.",
                r#"{"action":"respond","text":"Here is the party plan."}"#,
            ),
            (
                4,
                "current goal: plan a birthday party",
                r#"{"action":"plan","subgoals":["book venue","send invitations"]}"#,
            ),
        ],
        None,
    )
}

#[tokio::test]
async fn learned_workflow_shortens_repeat_task() {
    let (engine, agent) = engine(AgentConfig::new("host"), party_script());
    let goal = InputEvent::utterance("Plan a birthday party");

    let first = engine.start_session("a1", SessionMode::SelfTaught).unwrap();
    let outputs = engine.submit_event(&first, &goal).await.unwrap();
    assert_eq!(
        texts(&outputs),
        ["Venue booked.", "Invitations sent.", "Here is the party plan."]
    );
    let first_calls = engine.models().total_calls();
    assert_eq!(first_calls, 4);
    assert!(engine.session_info(&first).await.unwrap().awaiting_feedback);

    let feedback = Feedback {
        source: FeedbackSource::Human,
        verdict: FeedbackVerdict::Accept,
        note: "great".into(),
    };
    engine.apply_feedback(&first, &feedback).await.unwrap();
    assert_eq!(engine.session_info(&first).await.unwrap().status, SessionStatus::Halted);
    let stored = agent.workflows.all();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].goal_text, "Plan a birthday party");
    assert_eq!(
        stored[0].steps,
        [Directive::Plan {
            subgoals: vec!["book venue".into(), "send invitations".into()]
        }]
    );

    let second = engine.start_session("a1", SessionMode::SelfTaught).unwrap();
    let outputs = engine.submit_event(&second, &goal).await.unwrap();
    let second_calls = engine.models().total_calls() - first_calls;
    assert_eq!(texts(&outputs), ["Here is the party plan."]);
    assert!(second_calls < first_calls, "{second_calls} !< {first_calls}");
    let thought = engine.trace(&second).unwrap().snapshot()[0]
        .thought_text
        .clone()
        .unwrap();
    assert!(thought.contains("Learned workflow (similarity 1.00) for goal \"Plan a birthday party\""));
}

#[tokio::test]
async fn reject_feedback_continues_iteration() {
    let (engine, _) = engine(
        AgentConfig::new("writer"),
        script(
            &[(0, "feedback (reject)", r#"{"action":"respond","text":"Second draft."}"#)],
            Some(r#"{"action":"respond","text":"First draft."}"#),
        ),
    );
    let sid = engine.start_session("a1", SessionMode::SelfTaught).unwrap();
    engine
        .submit_event(&sid, &InputEvent::utterance("Write a poem"))
        .await
        .unwrap();
    let reject = Feedback {
        source: FeedbackSource::Human,
        verdict: FeedbackVerdict::Reject,
        note: "too short".into(),
    };
    let outputs = engine.apply_feedback(&sid, &reject).await.unwrap();
    assert_eq!(texts(&outputs), ["Second draft."]);
    let info = engine.session_info(&sid).await.unwrap();
    assert_ne!(info.status, SessionStatus::Halted);
    assert_eq!(info.step_count, 2);
    let session = engine.session(&sid).unwrap();
    let events: Vec<String> = session
        .lock()
        .await
        .short_term
        .events()
        .map(|e| e.payload.clone())
        .collect();
    assert!(events.contains(&"feedback (reject): too short".to_owned()));
}

#[tokio::test]
async fn feedback_requires_self_taught() {
    let (engine, _) = engine(AgentConfig::new("g"), script(&[], Some(ANSWER)));
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    let feedback = Feedback {
        source: FeedbackSource::Tool,
        verdict: FeedbackVerdict::Accept,
        note: String::new(),
    };
    assert!(matches!(
        engine.apply_feedback(&sid, &feedback).await,
        Err(SessionError::WrongMode)
    ));
}

#[tokio::test]
async fn unknown_agent_and_session() {
    let (engine, _) = engine(AgentConfig::new("g"), script(&[], Some(ANSWER)));
    assert!(matches!(
        engine.start_session("nope", SessionMode::GoalDirected),
        Err(SessionError::UnknownAgent(_))
    ));
    assert!(matches!(engine.trace("nope"), Err(SessionError::UnknownSession(_))));
    let sid = engine.start_session("a1", SessionMode::SelfTaught).unwrap();
    let info = engine.session_info(&sid).await.unwrap();
    assert_eq!(info.status, SessionStatus::Idle);
    assert_eq!(info.mode, SessionMode::SelfTaught);
}

#[tokio::test]
async fn tool_errors_are_observations() {
    let (engine, _) = engine(
        AgentConfig::new("t"),
        script(
            &[(0, "-> error: unknown tool", ANSWER)],
            Some(r#"{"action":"invoke_tool","tool":"missing","args":{}}"#),
        ),
    );
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine
        .submit_event(&sid, &InputEvent::utterance("use a tool"))
        .await
        .unwrap();
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.len(), 2);
    assert!(trace[0].effects[0].starts_with("invoke_tool missing {} -> error: unknown tool"));
    assert_eq!(trace[0].verdict, MonitorVerdict::Continue);
}

#[tokio::test]
async fn builtin_tool_result_reaches_history() {
    let (engine, agent) = engine(
        AgentConfig::new("artist"),
        script(
            &[(0, "image://placeholder/", ANSWER)],
            Some(r#"{"action":"invoke_tool","tool":"image_create","args":{"prompt":"a red bike"}}"#),
        ),
    );
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine.submit_event(&sid, &InputEvent::utterance("draw")).await.unwrap();
    assert_eq!(agent.tools.invocation_count("image_create"), 1);
    assert_eq!(engine.models().total_calls(), 2);
}

#[tokio::test]
async fn repairs_are_recorded_but_count_one_step() {
    let (engine, _) = engine(
        AgentConfig::new("r"),
        script(&[(0, "## repair", ANSWER)], Some("not json at all")),
    );
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine.submit_event(&sid, &InputEvent::utterance("hi")).await.unwrap();
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0].provider_calls(), 2);
    assert!(trace[0].attempts[0].error.is_some());
    assert_eq!(trace[0].step_count, 1);
}

#[tokio::test]
async fn button_click_becomes_perception() {
    let (engine, _) = engine(
        AgentConfig::new("shop"),
        script(
            &[(0, "user clicked 'yes'", r#"{"action":"respond","text":"Ordered."}"#)],
            Some(
                r#"{"action":"respond","text":"Buy it?","actions":[{"label":"Yes","action_id":"y"},{"label":"No","action_id":"n"}]}"#,
            ),
        ),
    );
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    let plans = engine
        .submit_event(&sid, &InputEvent::utterance("a bike"))
        .await
        .unwrap();
    assert_eq!(plans[0].elements.len(), 3);
    let click = mindos_core::lui::resolve_action(&plans[0], "y").unwrap();
    let plans = engine.submit_event(&sid, &click).await.unwrap();
    assert_eq!(texts(&plans), ["Ordered."]);
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace.last().unwrap().perception.as_deref(), Some("User clicked 'Yes'."));
}

#[tokio::test]
async fn trace_stream_replays_backlog_in_order() {
    let (engine, _) = engine(AgentConfig::new("s"), script(&[], Some(QUERY)));
    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine.submit_event(&sid, &InputEvent::utterance("go")).await.unwrap();
    let log = engine.trace(&sid).unwrap();
    let indices: Vec<u64> = log.stream().take(20).map(|t| t.cycle_index).collect().await;
    assert_eq!(indices, (0..20).collect::<Vec<_>>());
}
