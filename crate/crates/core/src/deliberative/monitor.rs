//! Plan execution with effect monitoring, and the replanning loop.

use std::sync::mpsc::Sender;
use std::sync::Arc;

use serde::Serialize;

use super::planner::{plan, Plan, PlanResult};
use super::{fluents_from_kb, Domain, Fluent, FluentSet, Goal, GroundAction, Milestone, MilestoneKind};
use crate::kb::KnowledgeBase;
use crate::skill::{Environment, InvocationId, Runtime, SkillOutcome, Tick};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EffectCheck {
    Ok,
    Divergence { missing: Vec<Fluent>, extra: Vec<Fluent> },
}

/// Every add effect must be observed and every delete effect absent.
pub fn check_effects(step: &GroundAction, observed: &FluentSet) -> EffectCheck {
    let missing: Vec<Fluent> = step.add.iter().filter(|f| !observed.contains(*f)).cloned().collect();
    let extra: Vec<Fluent> = step
        .del
        .iter()
        .filter(|f| observed.contains(*f) && !step.add.contains(f))
        .cloned()
        .collect();
    if missing.is_empty() && extra.is_empty() {
        EffectCheck::Ok
    } else {
        EffectCheck::Divergence { missing, extra }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "index", rename_all = "snake_case")]
pub enum ExecStatus {
    Completed,
    Diverged(usize),
    Preempted,
    Failed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Ready,
    Running(InvocationId),
    /// Waiting for the observation tick after a successful outcome.
    Observing(Tick),
    Finished(ExecStatus),
}

/// Incremental executor: call [`PlanExecution::poll`] once before the first
/// runtime tick and once after every tick.
pub struct PlanExecution {
    plan: Plan,
    plan_no: usize,
    index: usize,
    phase: Phase,
    cancelled: bool,
    milestones: Sender<Milestone>,
}

fn names(kb: &KnowledgeBase, fs: &[Fluent]) -> Vec<String> {
    fs.iter().map(|f| f.display(kb)).collect()
}

impl PlanExecution {
    pub fn new(plan: Plan, plan_no: usize, milestones: Sender<Milestone>) -> Self {
        PlanExecution {
            plan,
            plan_no,
            index: 0,
            phase: Phase::Ready,
            cancelled: false,
            milestones,
        }
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Index of the step being executed, if any.
    pub fn current_step(&self) -> Option<usize> {
        matches!(self.phase, Phase::Running(_) | Phase::Observing(_)).then_some(self.index)
    }

    pub fn current_invocation(&self) -> Option<InvocationId> {
        match self.phase {
            Phase::Running(id) => Some(id),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<ExecStatus> {
        match self.phase {
            Phase::Finished(s) => Some(s),
            _ => None,
        }
    }

    fn emit(&self, tick: Tick, kind: MilestoneKind) {
        // A dropped receiver only means nobody is listening.
        let _ = self.milestones.send(Milestone {
            tick,
            plan: self.plan_no,
            kind,
        });
    }

    /// Requests preemption; the current skill invocation is cancelled.
    pub fn cancel<E: Environment>(&mut self, rt: &mut Runtime<E>) {
        self.cancelled = true;
        if let Phase::Running(id) = self.phase {
            let _ = rt.cancel(id);
        }
    }

    pub fn poll<E: Environment>(&mut self, rt: &mut Runtime<E>, domain: &Domain) -> Option<ExecStatus> {
        loop {
            let tick = rt.now();
            match self.phase {
                Phase::Finished(s) => return Some(s),
                Phase::Ready | Phase::Observing(_) if self.cancelled => {
                    self.phase = Phase::Finished(ExecStatus::Preempted);
                }
                Phase::Ready => {
                    let Some(step) = self.plan.steps.get(self.index) else {
                        self.emit(tick, MilestoneKind::PlanCompleted);
                        self.phase = Phase::Finished(ExecStatus::Completed);
                        continue;
                    };
                    match rt.dispatch(step.goal.clone()) {
                        Ok(h) => {
                            self.phase = Phase::Running(h.id);
                            return None;
                        }
                        Err(e) => {
                            self.emit(
                                tick,
                                MilestoneKind::ActionFailed {
                                    index: self.index,
                                    reason: e.to_string(),
                                },
                            );
                            self.phase = Phase::Finished(ExecStatus::Failed(self.index));
                        }
                    }
                }
                Phase::Running(id) => {
                    let outcome = rt.outcome(id).ok().flatten().cloned();
                    match outcome {
                        None => return None,
                        Some(SkillOutcome::Succeeded(_)) => {
                            let at = rt.outcome_tick(id).expect("finished invocation") + 1;
                            self.phase = Phase::Observing(at);
                        }
                        Some(SkillOutcome::Failed(reason)) => {
                            self.emit(
                                tick,
                                MilestoneKind::ActionFailed {
                                    index: self.index,
                                    reason,
                                },
                            );
                            self.phase = Phase::Finished(ExecStatus::Failed(self.index));
                        }
                        Some(SkillOutcome::Preempted) => {
                            self.phase = Phase::Finished(ExecStatus::Preempted);
                        }
                    }
                }
                Phase::Observing(at) => {
                    if tick < at {
                        return None;
                    }
                    let observed = fluents_from_kb(rt.kb(), domain);
                    match check_effects(&self.plan.steps[self.index], &observed) {
                        EffectCheck::Ok => {
                            self.emit(tick, MilestoneKind::ActionCompleted { index: self.index });
                            self.index += 1;
                            self.phase = Phase::Ready;
                        }
                        EffectCheck::Divergence { missing, extra } => {
                            let kind = MilestoneKind::Divergence {
                                index: self.index,
                                missing: names(rt.kb(), &missing),
                                extra: names(rt.kb(), &extra),
                            };
                            self.emit(tick, kind);
                            self.phase = Phase::Finished(ExecStatus::Diverged(self.index));
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Achieved,
    Abandoned(String),
    /// Cancelled by the supervisor; no terminal milestone is sent.
    Preempted,
}

/// One goal pursued through plan, execute and replan cycles.
pub struct GoalEpisode {
    goal: Goal,
    domain: Arc<Domain>,
    horizon: usize,
    budget_left: u32,
    plans: Vec<Plan>,
    exec: Option<PlanExecution>,
    status: Option<EpisodeStatus>,
    cancelled: bool,
    milestones: Sender<Milestone>,
}

impl GoalEpisode {
    pub fn new(goal: Goal, domain: Arc<Domain>, budget: u32, horizon: usize, milestones: Sender<Milestone>) -> Self {
        GoalEpisode {
            goal,
            domain,
            horizon,
            budget_left: budget,
            plans: Vec::new(),
            exec: None,
            status: None,
            cancelled: false,
            milestones,
        }
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    pub fn plans(&self) -> &[Plan] {
        &self.plans
    }

    pub fn replans(&self) -> usize {
        self.plans.len().saturating_sub(1)
    }

    pub fn execution(&self) -> Option<&PlanExecution> {
        self.exec.as_ref()
    }

    pub fn status(&self) -> Option<&EpisodeStatus> {
        self.status.as_ref()
    }

    fn finish(&mut self, tick: Tick, status: EpisodeStatus) -> Option<EpisodeStatus> {
        let kind = match &status {
            EpisodeStatus::Achieved => Some(MilestoneKind::GoalAchieved),
            EpisodeStatus::Abandoned(reason) => Some(MilestoneKind::GoalAbandoned { reason: reason.clone() }),
            EpisodeStatus::Preempted => None,
        };
        if let Some(kind) = kind {
            let _ = self.milestones.send(Milestone {
                tick,
                plan: self.plans.len(),
                kind,
            });
        }
        self.status = Some(status.clone());
        Some(status)
    }

    pub fn cancel<E: Environment>(&mut self, rt: &mut Runtime<E>) {
        self.cancelled = true;
        if let Some(exec) = &mut self.exec {
            exec.cancel(rt);
        }
    }

    pub fn poll<E: Environment>(&mut self, rt: &mut Runtime<E>) -> Option<EpisodeStatus> {
        if let Some(s) = &self.status {
            return Some(s.clone());
        }
        let domain = Arc::clone(&self.domain);
        loop {
            let tick = rt.now();
            let Some(exec) = &mut self.exec else {
                if self.cancelled {
                    return self.finish(tick, EpisodeStatus::Preempted);
                }
                let state = fluents_from_kb(rt.kb(), &domain);
                match plan(rt.kb(), &domain, &state, &self.goal, self.horizon) {
                    Err(e) => return self.finish(tick, EpisodeStatus::Abandoned(e.to_string())),
                    Ok(PlanResult::Unsolvable { horizon }) => {
                        return self.finish(
                            tick,
                            EpisodeStatus::Abandoned(format!("unsolvable within horizon {horizon}")),
                        )
                    }
                    Ok(PlanResult::Plan(p)) => {
                        self.plans.push(p.clone());
                        self.exec = Some(PlanExecution::new(p, self.plans.len(), self.milestones.clone()));
                    }
                }
                continue;
            };
            match exec.poll(rt, &domain)? {
                ExecStatus::Preempted => return self.finish(tick, EpisodeStatus::Preempted),
                ExecStatus::Completed if self.goal.holds(&fluents_from_kb(rt.kb(), &domain)) => {
                    return self.finish(tick, EpisodeStatus::Achieved)
                }
                ExecStatus::Completed | ExecStatus::Diverged(_) | ExecStatus::Failed(_) => {
                    if self.cancelled {
                        return self.finish(tick, EpisodeStatus::Preempted);
                    }
                    if self.budget_left == 0 {
                        return self.finish(tick, EpisodeStatus::Abandoned("budget exhausted".into()));
                    }
                    self.budget_left -= 1;
                    self.exec = None;
                }
            }
        }
    }
}

/// Drives `exec` to completion, ticking the runtime. Cancels the plan if it
/// is still running after `max_ticks`.
pub fn run_plan<E: Environment>(
    rt: &mut Runtime<E>,
    domain: &Domain,
    exec: &mut PlanExecution,
    max_ticks: Tick,
) -> ExecStatus {
    let deadline = rt.now() + max_ticks;
    loop {
        if let Some(s) = exec.poll(rt, domain) {
            return s;
        }
        if rt.now() >= deadline {
            exec.cancel(rt);
        }
        rt.tick();
    }
}

/// Blocking goal episode; see [`GoalEpisode`].
pub fn solve_goal<E: Environment>(
    rt: &mut Runtime<E>,
    episode: &mut GoalEpisode,
    max_ticks: Tick,
) -> EpisodeStatus {
    let deadline = rt.now() + max_ticks;
    loop {
        if let Some(s) = episode.poll(rt) {
            return s;
        }
        if rt.now() >= deadline {
            episode.cancel(rt);
        }
        rt.tick();
    }
}
