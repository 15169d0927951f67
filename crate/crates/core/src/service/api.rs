//! Request routing, roles, and the JSON envelopes shared by every endpoint.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Service, TrainRequest, TrainingJob, TrainingResult};
use crate::context::{ContextError, SensorBatch};
use crate::ids::derived_id;
use crate::ml::MlError;
use crate::monitoring::{
    compare, delay_series, evaluate_alert_rules, goal_progress, rank_participants, summarize, Goal, GoalMetric,
    RankMetric, RankOrder, SeriesMetric,
};
use crate::plan::{ExperimentPlan, PlanError, ReplanOp, ReplanRequest};
use crate::store::{Participant, StmPayload, StoreError};
use crate::time::Timestamp;
use crate::vocab::VocabError;
use crate::DiaryAnswerSet;

/// Carried by every response body.
pub const API_SCHEMA_VERSION: u32 = 1;

const SCHEMA_DOCUMENT: &str = include_str!("../../../../docs/api-schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Some(Method::Get),
            "POST" => Some(Method::Post),
            "PUT" => Some(Method::Put),
            "DELETE" => Some(Method::Delete),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub token: Option<String>,
    pub body: Option<Value>,
    /// Clock used when the request carries no `now` of its own.
    pub now: Option<Timestamp>,
}

impl ApiRequest {
    /// Whether this is the training endpoint, which servers may split with
    /// [`Service::begin_training`] and [`Service::finish_training`].
    pub fn is_training(&self) -> bool {
        self.method == Method::Post && self.path.trim_matches('/') == "scheduler/train"
    }

    pub fn new(method: Method, path: &str) -> Self {
        Self { method, path: path.to_string(), query: BTreeMap::new(), token: None, body: None, now: None }
    }

    pub fn get(path: &str) -> Self {
        Self::new(Method::Get, path)
    }

    pub fn post(path: &str, body: Value) -> Self {
        Self::new(Method::Post, path).body(body)
    }

    pub fn token(mut self, token: &str) -> Self {
        self.token = Some(token.to_string());
        self
    }

    pub fn query(mut self, key: &str, value: impl ToString) -> Self {
        self.query.insert(key.to_string(), value.to_string());
        self
    }

    pub fn body(mut self, body: Value) -> Self {
        self.body = Some(body);
        self
    }

    pub fn at(mut self, now: Timestamp) -> Self {
        self.now = Some(now);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    pub fn ok(status: u16, data: Value) -> Self {
        Self { status, body: json!({ "schema_version": API_SCHEMA_VERSION, "data": data }) }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn data(&self) -> &Value {
        &self.body["data"]
    }

    pub fn error_code(&self) -> Option<&str> {
        self.body["error"]["code"].as_str()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    pub details: serde_json::Map<String, Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), details: serde_json::Map::new() }
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(401, "unauthorized", message)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(404, "not_found", format!("unknown {}", what.into()))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(409, "conflict", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(422, "unprocessable", message)
    }

    pub fn vocabulary(e: &VocabError) -> Self {
        let field = match e {
            VocabError::UnknownTerm { field, .. } => *field,
            VocabError::CyclicLocation(_) => "where",
        };
        Self::new(422, "vocabulary", e.to_string()).with_detail("field", field.into())
    }

    pub fn with_detail(mut self, key: &str, value: Value) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn to_response(&self) -> ApiResponse {
        let mut err = serde_json::Map::new();
        err.insert("code".into(), self.code.into());
        err.insert("message".into(), self.message.clone().into());
        err.extend(self.details.clone());
        ApiResponse { status: self.status, body: json!({ "schema_version": API_SCHEMA_VERSION, "error": err }) }
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        let msg = e.to_string();
        match e {
            PlanError::InvalidPlan(_) | PlanError::OutsidePlan(_) | PlanError::InvalidSnooze(_) => {
                Self::new(422, "invalid", msg)
            }
            PlanError::UnknownAction(_) | PlanError::UnknownPlan(_) | PlanError::WrongParticipant { .. } => {
                Self::new(404, "not_found", msg)
            }
            PlanError::AlreadySettled { state, .. } => Self::new(409, "already_settled", msg).with_detail("state", state.into()),
            PlanError::IllegalTransition { from, .. } => {
                Self::new(409, "illegal_transition", msg).with_detail("state", from.into())
            }
            PlanError::NonMonotonic { .. } | PlanError::GapConflict { .. } | PlanError::PastDeadline { .. } => {
                Self::new(409, "conflict", msg)
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Plan(p) => p.into(),
            StoreError::Rejected(m) => Self::conflict(m),
            other => Self::new(500, "storage", other.to_string()),
        }
    }
}

impl From<MlError> for ApiError {
    fn from(e: MlError) -> Self {
        Self::unprocessable(e.to_string())
    }
}

impl From<ContextError> for ApiError {
    fn from(e: ContextError) -> Self {
        let mut err = Self::unprocessable(e.to_string());
        if let Some(f) = e.field() {
            err = err.with_detail("field", f.into());
        }
        err
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Role {
    Researcher,
    Participant(String),
}

impl Role {
    fn may_see(&self, participant: &str) -> bool {
        match self {
            Role::Researcher => true,
            Role::Participant(p) => p == participant,
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Option<Value>) -> Result<T, ApiError> {
    let v = body.clone().unwrap_or(Value::Null);
    serde_json::from_value(v).map_err(|e| ApiError::new(422, "schema", format!("malformed body: {e}")))
}

fn parse_date(s: &str) -> Result<NaiveDate, ApiError> {
    s.parse().map_err(|_| ApiError::new(422, "schema", format!("expected YYYY-MM-DD, got {s:?}")))
}

fn parse_time(s: &str) -> Result<Timestamp, ApiError> {
    s.parse().map_err(|_| ApiError::new(422, "schema", format!("expected an RFC 3339 instant, got {s:?}")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

#[derive(Deserialize)]
struct EnrollBody {
    id: String,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct AnswerBody {
    action_id: String,
    answers: DiaryAnswerSet,
}

#[derive(Deserialize)]
struct ReplanBody {
    action_id: String,
    #[serde(flatten)]
    op: ReplanOp,
}

#[derive(Deserialize)]
struct GoalBody {
    #[serde(default)]
    id: Option<String>,
    metric: GoalMetric,
    target: f64,
    #[serde(default = "default_goal_window")]
    window_days: u32,
}

fn default_goal_window() -> u32 {
    7
}

#[derive(Deserialize)]
struct GoalPatch {
    target: Option<f64>,
    window_days: Option<u32>,
}

fn parse_enum<T: DeserializeOwned>(name: &str, s: &str) -> Result<T, ApiError> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| ApiError::new(422, "schema", format!("unknown {name} {s:?}")))
}

impl Service {
    fn role_of(&self, token: Option<&str>) -> Option<Role> {
        let t = token?;
        if t == self.cfg.researcher_token {
            return Some(Role::Researcher);
        }
        self.participant_for_token(t).map(|p| Role::Participant(p.to_string()))
    }

    fn request_now(&self, req: &ApiRequest) -> Result<Option<Timestamp>, ApiError> {
        if self.cfg.client_clock {
            if let Some(s) = req.query.get("now") {
                return parse_time(s).map(Some);
            }
            if let Some(s) = req.body.as_ref().and_then(|b| b.get("now")).and_then(Value::as_str) {
                return parse_time(s).map(Some);
            }
        }
        Ok(req.now)
    }

    /// Answer one request. State changes are in the stores before this returns.
    pub fn handle(&mut self, req: &ApiRequest) -> ApiResponse {
        match self.dispatch(req) {
            Ok((status, data)) => ApiResponse::ok(status, data),
            Err(e) => e.to_response(),
        }
    }

    fn dispatch(&mut self, req: &ApiRequest) -> Result<(u16, Value), ApiError> {
        let segs: Vec<&str> = req.path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        if req.method == Method::Get && segs == ["schema"] {
            let doc: Value = serde_json::from_str(SCHEMA_DOCUMENT).expect("schema document is JSON");
            return Ok((200, doc));
        }
        let role = self.role_of(req.token.as_deref()).ok_or_else(|| ApiError::unauthorized("missing or unknown token"))?;
        let now = self.request_now(req)?;
        let tick = match now {
            Some(t) => Some(self.tick(t)?),
            None => None,
        };
        let need_now = || now.ok_or_else(|| ApiError::new(422, "schema", "a `now` instant is required"));
        let researcher = || {
            if role == Role::Researcher {
                Ok(())
            } else {
                Err(ApiError::unauthorized("researcher role required"))
            }
        };
        let participant_only = || match &role {
            Role::Participant(p) => Ok(p.clone()),
            Role::Researcher => Err(ApiError::unauthorized("participant role required")),
        };
        let q = |k: &str| req.query.get(k).map(String::as_str).filter(|s| !s.is_empty());

        use Method::*;
        match (req.method, segs.as_slice()) {
            (Get, ["plans"]) => {
                researcher()?;
                Ok((200, to_value(&self.stm.schedule().plans.values().collect::<Vec<_>>())))
            }
            (Post, ["plans"]) => {
                researcher()?;
                let plan: ExperimentPlan = parse_body(&req.body)?;
                plan.validate()?;
                let id = plan.id.clone();
                let expanded = self.create_plan(plan, need_now()?)?;
                Ok((201, json!({ "plan_id": id, "expanded": expanded })))
            }
            (Get, ["participants"]) => {
                researcher()?;
                let list: Vec<Value> = self
                    .stm
                    .state()
                    .participants
                    .values()
                    .map(|p| {
                        let n = self.stm.schedule().actions_of(&p.id).count();
                        json!({ "id": p.id, "enrolled_at": p.enrolled_at, "attributes": p.attributes, "actions": n })
                    })
                    .collect();
                Ok((200, Value::Array(list)))
            }
            (Post, ["participants"]) => {
                researcher()?;
                let body: EnrollBody = parse_body(&req.body)?;
                let now = need_now()?;
                let id = body.id.clone();
                let token = self.enroll(Participant { id: body.id, enrolled_at: now, attributes: body.attributes }, now)?;
                let actions = self.stm.schedule().actions_of(&id).count();
                Ok((201, json!({ "participant": id, "token": token, "actions": actions })))
            }
            (Get, ["participants", id, rest @ ..]) => {
                let id = id.to_string();
                if !role.may_see(&id) {
                    return Err(ApiError::unauthorized("participants may only access their own data"));
                }
                if !self.stm.state().participants.contains_key(&id) {
                    return Err(ApiError::not_found(format!("participant {id}")));
                }
                match rest {
                    ["tasks"] => {
                        let now = need_now()?;
                        let tasks = self.deliver(&id, now)?;
                        Ok((200, json!({ "participant": id, "now": now, "tasks": tasks })))
                    }
                    ["actions"] => {
                        let from = q("from").map(parse_time).transpose()?;
                        let to = q("to").map(parse_time).transpose()?;
                        let state = q("state");
                        let mut list: Vec<_> = self
                            .stm
                            .schedule()
                            .actions_of(&id)
                            .filter(|a| from.is_none_or(|f| a.due_time >= f) && to.is_none_or(|t| a.due_time < t))
                            .filter(|a| state.is_none_or(|s| a.state.name() == s))
                            .collect();
                        list.sort_by(|a, b| a.due_time.cmp(&b.due_time).then_with(|| a.id.cmp(&b.id)));
                        Ok((200, to_value(&list)))
                    }
                    ["avoid-windows"] => {
                        let date = match q("date") {
                            Some(d) => parse_date(d)?,
                            None => need_now()?.date_naive(),
                        };
                        let windows = self.stm.schedule().windows_for(&id, date);
                        let model = self.model.as_ref().map(|m| m.family);
                        Ok((200, json!({ "participant": id, "date": date, "windows": windows, "model": model })))
                    }
                    _ => Err(ApiError::not_found(format!("route {}", req.path))),
                }
            }
            (Post, ["answers"]) => {
                let body: AnswerBody = parse_body(&req.body)?;
                let now = need_now()?;
                let owner = self.stm.schedule().action(&body.action_id)?.participant.clone();
                if !role.may_see(&owner) {
                    return Err(ApiError::not_found(format!("action {}", body.action_id)));
                }
                let receipt = self.answer(&owner, &body.action_id, body.answers, now)?;
                Ok((if receipt.replayed { 200 } else { 201 }, to_value(&receipt)))
            }
            (Post, ["sensors", "batch"]) => {
                let batch: SensorBatch = parse_body(&req.body)?;
                if !role.may_see(&batch.participant) {
                    return Err(ApiError::unauthorized("participants may only upload their own readings"));
                }
                let receipt = self.ingest_sensors(batch, need_now()?)?;
                Ok((if receipt.duplicate { 200 } else { 201 }, to_value(&receipt)))
            }
            (Post, ["replan"]) => {
                let body: ReplanBody = parse_body(&req.body)?;
                let owner = self.stm.schedule().action(&body.action_id)?.participant.clone();
                if !role.may_see(&owner) {
                    return Err(ApiError::not_found(format!("action {}", body.action_id)));
                }
                let request = ReplanRequest {
                    action_id: body.action_id,
                    participant: owner,
                    op: body.op,
                    requested_at: need_now()?,
                };
                let action = self.replan(request, need_now()?)?;
                Ok((200, to_value(&action)))
            }
            (Post, ["scheduler", "train"]) => {
                researcher()?;
                let body: TrainRequest = if req.body.is_some() { parse_body(&req.body)? } else { TrainRequest::default() };
                let result = self.train_now(&body, need_now()?)?;
                Ok((200, to_value(&result)))
            }
            (Get, ["model"]) => {
                researcher()?;
                let m = self.model.as_ref().map(|m| {
                    json!({
                        "family": m.family, "seed": m.seed, "n_features": m.n_features,
                        "feature_names": m.schema.names(), "trained_examples": m.trained_examples,
                        "trained_at": m.trained_at, "metrics": m.metrics,
                    })
                });
                Ok((200, m.unwrap_or(Value::Null)))
            }
            (Post, ["tick"]) => {
                researcher()?;
                need_now()?;
                Ok((200, to_value(&tick.unwrap_or_default())))
            }
            (Get, ["dashboard", view]) => {
                let now = need_now()?;
                let (from, to) = self.range(q("from"), q("to"), now)?;
                let schedule = self.stm.schedule();
                match *view {
                    "summary" => {
                        let ids: Vec<String> = match (&role, q("participant")) {
                            (Role::Participant(p), _) => vec![p.clone()],
                            (Role::Researcher, Some(p)) => vec![self.known(p)?],
                            (Role::Researcher, None) => self.participants(),
                        };
                        let rows: Vec<_> = ids.iter().map(|p| summarize(p, schedule, &self.ltm, from, to)).collect();
                        let sent: u32 = rows.iter().map(|r| r.sent).sum();
                        let answered: u32 = rows.iter().map(|r| r.answered).sum();
                        let expired: u32 = rows.iter().map(|r| r.expired).sum();
                        let sensor: u32 = rows.iter().map(|r| r.total_sensor_records()).sum();
                        let totals = json!({
                            "participants": rows.len(), "sent": sent, "answered": answered, "expired": expired,
                            "sensor_records": sensor,
                            "completion_rate": if sent == 0 { 0.0 } else { f64::from(answered) / f64::from(sent) },
                        });
                        Ok((200, json!({ "from": from, "to": to, "totals": totals, "participants": rows })))
                    }
                    "compare" => {
                        let metric: SeriesMetric = parse_enum("metric", q("metric").unwrap_or("answered"))?;
                        let all = self.participants();
                        let ids: Vec<String> = match (&role, q("ids")) {
                            (Role::Participant(_), _) => all,
                            (Role::Researcher, Some(list)) => {
                                list.split(',').map(|p| self.known(p.trim())).collect::<Result<_, _>>()?
                            }
                            (Role::Researcher, None) => all,
                        };
                        let mut c = compare(&ids, metric, schedule, &self.ltm, from, to);
                        let mut highlight = q("highlight").map(String::from);
                        if let Role::Participant(me) = &role {
                            let mut n = 0;
                            for s in &mut c.series {
                                if &s.participant == me {
                                    s.participant = "you".into();
                                } else {
                                    n += 1;
                                    s.participant = format!("P{n}");
                                }
                            }
                            highlight = Some("you".into());
                        }
                        Ok((200, json!({ "comparison": c, "highlight": highlight })))
                    }
                    "rank" => {
                        researcher()?;
                        let metric: RankMetric = parse_enum("metric", q("metric").unwrap_or("contribution"))?;
                        let order: RankOrder = parse_enum("order", q("order").unwrap_or("least"))?;
                        let limit = match q("limit") {
                            Some(s) => s.parse().map_err(|_| ApiError::new(422, "schema", "limit must be an integer"))?,
                            None => usize::MAX,
                        };
                        let ranked = rank_participants(&self.participants(), metric, order, limit, schedule, &self.ltm, from, to);
                        Ok((200, json!({ "metric": metric, "order": order, "entries": ranked })))
                    }
                    "delays" => {
                        let p = match (&role, q("participant")) {
                            (Role::Participant(p), _) => p.clone(),
                            (Role::Researcher, Some(p)) => self.known(p)?,
                            (Role::Researcher, None) => {
                                return Err(ApiError::new(422, "schema", "participant query parameter required"))
                            }
                        };
                        Ok((200, json!({ "participant": p, "points": delay_series(&p, schedule, &self.ltm) })))
                    }
                    _ => Err(ApiError::not_found(format!("route {}", req.path))),
                }
            }
            (Get, ["alerts"]) => {
                researcher()?;
                let alerts = evaluate_alert_rules(self.stm.schedule(), &self.ltm, need_now()?, &self.cfg.alerts);
                let open_only = q("status") == Some("open");
                let list: Vec<_> = alerts.into_iter().filter(|a| !open_only || a.is_open()).collect();
                Ok((200, to_value(&list)))
            }
            (Get, ["goals"]) => {
                let me = participant_only()?;
                let goals: Vec<&Goal> = self.stm.state().goals.values().filter(|g| g.participant == me).collect();
                Ok((200, to_value(&goals)))
            }
            (Post, ["goals"]) => {
                let me = participant_only()?;
                let body: GoalBody = parse_body(&req.body)?;
                let now = need_now()?;
                let id = body.id.unwrap_or_else(|| {
                    derived_id("goal-", &[&me, &to_value(&body.metric).to_string(), &now.to_rfc3339()])
                });
                if self.stm.state().goals.contains_key(&id) {
                    return Err(ApiError::conflict(format!("goal {id} exists")));
                }
                let goal = Goal { id, participant: me, metric: body.metric, target: body.target, window_days: body.window_days, created_at: now };
                self.upsert_goal(goal, now).map(|g| (201, g))
            }
            (method, ["goals", id, rest @ ..]) => {
                let me = participant_only()?;
                let goal = self
                    .stm
                    .state()
                    .goals
                    .get(*id)
                    .filter(|g| g.participant == me)
                    .cloned()
                    .ok_or_else(|| ApiError::not_found(format!("goal {id}")))?;
                match (method, rest) {
                    (Get, []) => Ok((200, to_value(&goal))),
                    (Put, []) => {
                        let patch: GoalPatch = parse_body(&req.body)?;
                        let mut g = goal;
                        g.target = patch.target.unwrap_or(g.target);
                        g.window_days = patch.window_days.unwrap_or(g.window_days);
                        self.upsert_goal(g, need_now()?).map(|g| (200, g))
                    }
                    (Delete, []) => {
                        self.stm.append(StmPayload::GoalRemoved { id: goal.id.clone() }, need_now()?)?;
                        Ok((200, json!({ "removed": goal.id })))
                    }
                    (Get, ["progress"]) => {
                        let now = need_now()?;
                        let to = now.date_naive() + Duration::days(1);
                        let from = to - Duration::days(i64::from(goal.window_days));
                        let s = summarize(&goal.participant, self.stm.schedule(), &self.ltm, from, to);
                        Ok((200, to_value(&goal_progress(&goal, &s))))
                    }
                    _ => Err(ApiError::not_found(format!("route {}", req.path))),
                }
            }
            _ => Err(ApiError::not_found(format!("route {} {}", to_value(&req.method).as_str().unwrap_or(""), req.path))),
        }
    }

    /// First half of `POST /scheduler/train`: authorize, tick and snapshot the inputs. The
    /// returned job can run on another thread; hand its result to [`Service::finish_training`].
    pub fn begin_training(&mut self, req: &ApiRequest) -> Result<(TrainingJob, Timestamp), ApiResponse> {
        self.training_job(req).map_err(|e| e.to_response())
    }

    fn training_job(&mut self, req: &ApiRequest) -> Result<(TrainingJob, Timestamp), ApiError> {
        if self.role_of(req.token.as_deref()) != Some(Role::Researcher) {
            return Err(ApiError::unauthorized("researcher role required"));
        }
        let now = self.request_now(req)?.ok_or_else(|| ApiError::new(422, "schema", "a `now` instant is required"))?;
        self.tick(now)?;
        let body: TrainRequest = if req.body.is_some() { parse_body(&req.body)? } else { TrainRequest::default() };
        Ok((self.prepare_training(&body, now)?, now))
    }

    /// Second half of `POST /scheduler/train`: install the fitted model and build the response.
    pub fn finish_training(&mut self, result: Result<TrainingResult, MlError>, now: Timestamp) -> ApiResponse {
        let mut result = match result {
            Ok(r) => r,
            Err(e) => return ApiError::from(e).to_response(),
        };
        let model = result.model.take().expect("trained");
        match self.install_model(model, now) {
            Ok(_) => ApiResponse::ok(200, to_value(&result)),
            Err(e) => ApiError::from(e).to_response(),
        }
    }

    fn known(&self, p: &str) -> Result<String, ApiError> {
        if self.stm.state().participants.contains_key(p) {
            Ok(p.to_string())
        } else {
            Err(ApiError::not_found(format!("participant {p}")))
        }
    }

    fn upsert_goal(&mut self, goal: Goal, now: Timestamp) -> Result<Value, ApiError> {
        if !goal.is_valid() {
            return Err(ApiError::unprocessable("goal target or window out of range").with_detail("field", "target".into()));
        }
        self.stm.append(StmPayload::GoalUpserted(goal.clone()), now)?;
        Ok(to_value(&goal))
    }

    /// `[from, to)` from query strings; defaults to the first plan day through today.
    fn range(&self, from: Option<&str>, to: Option<&str>, now: Timestamp) -> Result<(NaiveDate, NaiveDate), ApiError> {
        let today = now.date_naive();
        let from = match from {
            Some(s) => parse_date(s)?,
            None => self.stm.schedule().plans.values().map(|p| p.start).min().unwrap_or(today).min(today),
        };
        let to = match to {
            Some(s) => parse_date(s)?,
            None => today + Duration::days(1),
        };
        if to < from {
            return Err(ApiError::new(422, "schema", "`to` precedes `from`"));
        }
        Ok((from, to))
    }
}
