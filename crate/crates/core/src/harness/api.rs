//! Request handling behind the HTTP server. Everything here is plain
//! functions over JSON values so the server binary only does transport.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::dsl::{parse_text, statement_edit_distance, Program};
use crate::error::ParseError;
use crate::model::Model;
use crate::rng::derive_seed;
use crate::world::{apply_action, config_seed, mean_return_on, ActionFlags, Direction, GridState, TaskInstance, TaskKind, TaskSpec};

pub const ALLOWED_BUDGETS: [usize; 2] = [3, 5];
pub const SESSION_CONFIGS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: impl Serialize) -> ApiResponse {
        ApiResponse {
            status: 200,
            body: serde_json::to_value(body).expect("response serializes"),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> ApiResponse {
        ApiResponse {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn parse_error(field: &str, e: &ParseError) -> ApiResponse {
        ApiResponse {
            status: 400,
            body: json!({ "ok": false, "error": format!("{field}: {}", e.message), "index": e.index }),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ParseRequest {
    pub program: String,
}

#[derive(Debug, Deserialize)]
pub struct ExecuteRequest {
    pub program: String,
    pub task: String,
    #[serde(default)]
    pub seed: u64,
    /// Optional `[height, width]`.
    #[serde(default)]
    pub size: Option<(usize, usize)>,
}

#[derive(Debug, Deserialize)]
pub struct EditDistanceRequest {
    pub original: String,
    pub edited: String,
}

#[derive(Debug, Deserialize)]
pub struct SessionRequest {
    pub task: String,
    pub program: String,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> usize {
    5
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    pub session: String,
    pub edited: String,
}

#[derive(Debug, Deserialize)]
pub struct DecodeRequest {
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Agent {
    pub row: usize,
    pub col: usize,
    pub dir: Direction,
}

/// One grid snapshot; frame 0 is the initial state and frame t+1 follows
/// action t.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub grid: Vec<String>,
    pub agent: Agent,
    pub markers: u32,
    pub action: Option<String>,
    /// Statement id that emitted the action.
    pub node: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExecuteResponse {
    pub reward: f64,
    pub actions: Vec<String>,
    pub frames: Vec<Frame>,
    pub flags: Vec<ActionFlags>,
    pub terminated: String,
}

fn snapshot(state: &GridState, action: Option<String>, node: Option<u32>) -> Frame {
    let (row, col) = state.agent_pos();
    Frame {
        grid: state.to_ascii().lines().map(str::to_string).collect(),
        agent: Agent {
            row,
            col,
            dir: state.agent_dir(),
        },
        markers: state.total_markers(),
        action,
        node,
    }
}

/// Runs `program` on one instance and replays the trace into frames.
pub fn execute_on(instance: &TaskInstance, program: &Program) -> ExecuteResponse {
    let rollout = instance.run(program);
    let mut frames = Vec::with_capacity(rollout.actions.len() + 1);
    let mut state = rollout.initial.clone();
    frames.push(snapshot(&state, None, None));
    for (a, node) in rollout.actions.iter().zip(&rollout.action_nodes) {
        state = apply_action(&state, *a).0;
        frames.push(snapshot(&state, Some(a.to_string()), Some(*node)));
    }
    ExecuteResponse {
        reward: instance.reward_for_actions(&rollout.actions),
        actions: rollout.actions.iter().map(|a| a.to_string()).collect(),
        frames,
        flags: rollout.flags.clone(),
        terminated: format!("{:?}", rollout.terminated),
    }
}

struct Session {
    original: Program,
    instances: Vec<TaskInstance>,
    budget: usize,
    best: Option<f64>,
}

pub struct ApiState {
    model: Option<Model>,
    sessions: Mutex<HashMap<String, Session>>,
    counter: AtomicU64,
}

fn body<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, ApiResponse> {
    serde_json::from_slice(bytes).map_err(|e| ApiResponse::error(400, format!("bad request body: {e}")))
}

fn program(field: &str, text: &str) -> Result<Program, ApiResponse> {
    parse_text(text).map_err(|e| ApiResponse::parse_error(field, &e))
}

fn task(name: &str) -> Result<TaskKind, ApiResponse> {
    name.parse().map_err(|e: crate::error::WorldError| ApiResponse::error(400, e.to_string()))
}

impl ApiState {
    pub fn new(model: Option<Model>) -> ApiState {
        ApiState {
            model,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    pub fn handle(&self, method: &str, path: &str, bytes: &[u8]) -> ApiResponse {
        let r = match (method, path) {
            ("GET", "/tasks") => Ok(self.tasks()),
            ("POST", "/parse") => body(bytes).and_then(|b| self.parse(b)),
            ("POST", "/execute") => body(bytes).and_then(|b| self.execute(b)),
            ("POST", "/edit-distance") => body(bytes).and_then(|b| self.edit_distance(b)),
            ("POST", "/session") => body(bytes).and_then(|b| self.start_session(b)),
            ("POST", "/session/submit") => body(bytes).and_then(|b| self.submit(b)),
            ("POST", "/decode") => body(bytes).and_then(|b| self.decode(b)),
            (_, "/tasks" | "/parse" | "/execute" | "/edit-distance" | "/session" | "/session/submit" | "/decode") => {
                Err(ApiResponse::error(405, format!("method {method} not allowed on {path}")))
            }
            _ => Err(ApiResponse::error(404, format!("no route {path}"))),
        };
        r.unwrap_or_else(|e| e)
    }

    pub fn tasks(&self) -> ApiResponse {
        let list: Vec<Value> = TaskKind::ALL
            .iter()
            .map(|k| {
                let (h, w) = k.default_dims();
                json!({ "name": k.name(), "height": h, "width": w, "max_reward": 1.0 })
            })
            .collect();
        ApiResponse::ok(list)
    }

    pub fn parse(&self, req: ParseRequest) -> Result<ApiResponse, ApiResponse> {
        let p = program("program", &req.program)?;
        Ok(ApiResponse::ok(json!({
            "ok": true,
            "program": p.to_text(),
            "tokens": p.token_len(),
        })))
    }

    pub fn execute(&self, req: ExecuteRequest) -> Result<ApiResponse, ApiResponse> {
        let p = program("program", &req.program)?;
        let kind = task(&req.task)?;
        let spec = match req.size {
            Some((h, w)) => TaskSpec::with_size(kind, h, w).map_err(|e| ApiResponse::error(400, e.to_string()))?,
            None => TaskSpec::new(kind),
        };
        let inst = spec.sample(req.seed).map_err(|e| ApiResponse::error(400, e.to_string()))?;
        Ok(ApiResponse::ok(execute_on(&inst, &p)))
    }

    pub fn edit_distance(&self, req: EditDistanceRequest) -> Result<ApiResponse, ApiResponse> {
        let a = program("original", &req.original)?;
        let b = program("edited", &req.edited)?;
        Ok(ApiResponse::ok(json!({ "distance": statement_edit_distance(&a, &b) })))
    }

    pub fn start_session(&self, req: SessionRequest) -> Result<ApiResponse, ApiResponse> {
        if !ALLOWED_BUDGETS.contains(&req.budget) {
            return Err(ApiResponse::error(400, format!("budget must be one of {ALLOWED_BUDGETS:?}")));
        }
        let p = program("program", &req.program)?;
        let spec = TaskSpec::new(task(&req.task)?);
        let instances = (0..SESSION_CONFIGS)
            .map(|i| spec.sample(config_seed(req.seed, i)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiResponse::error(400, e.to_string()))?;
        let reward = mean_return_on(&instances, &p);
        let first = execute_on(&instances[0], &p);
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{:016x}", derive_seed(0x5e55, n));
        self.sessions.lock().expect("session lock").insert(
            id.clone(),
            Session {
                original: p,
                instances,
                budget: req.budget,
                best: None,
            },
        );
        Ok(ApiResponse::ok(json!({
            "session": id,
            "orig_reward": reward,
            "budget": req.budget,
            "frames": first.frames,
        })))
    }

    pub fn submit(&self, req: SubmitRequest) -> Result<ApiResponse, ApiResponse> {
        let edited = program("edited", &req.edited)?;
        let mut sessions = self.sessions.lock().expect("session lock");
        let s = sessions
            .get_mut(&req.session)
            .ok_or_else(|| ApiResponse::error(404, format!("unknown session {}", req.session)))?;
        let distance = statement_edit_distance(&s.original, &edited);
        if distance > s.budget {
            return Err(ApiResponse {
                status: 422,
                body: json!({
                    "error": format!(
                        "Issue with Code? This edit changes {distance} statements but only {} are allowed.",
                        s.budget
                    ),
                    "distance": distance,
                    "budget": s.budget,
                    "within_budget": false,
                }),
            });
        }
        let reward = mean_return_on(&s.instances, &edited);
        let best = s.best.map_or(reward, |b| b.max(reward));
        s.best = Some(best);
        let first = execute_on(&s.instances[0], &edited);
        Ok(ApiResponse::ok(json!({
            "reward": reward,
            "distance": distance,
            "within_budget": true,
            "best_so_far": best,
            "frames": first.frames,
        })))
    }

    pub fn decode(&self, req: DecodeRequest) -> Result<ApiResponse, ApiResponse> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| ApiResponse::error(503, "no checkpoint loaded"))?;
        if req.z.len() != m.latent_dim() || req.z.iter().any(|x| !x.is_finite()) {
            return Err(ApiResponse::error(
                400,
                format!("z must hold {} finite numbers", m.latent_dim()),
            ));
        }
        let p = m.decoder().greedy(&req.z);
        Ok(ApiResponse::ok(json!({ "program": p.to_text() })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(api: &ApiState, path: &str, v: Value) -> ApiResponse {
        api.handle("POST", path, &serde_json::to_vec(&v).unwrap())
    }

    #[test]
    fn malformed_program_is_400_with_index() {
        let api = ApiState::new(None);
        let r = post(&api, "/parse", json!({ "program": "DEF run m( move" }));
        assert_eq!(r.status, 400);
        assert!(r.body["index"].is_number());
        let r = post(&api, "/execute", json!({ "program": "DEF run m( jump m)", "task": "Maze" }));
        assert_eq!(r.status, 400);
    }

    #[test]
    fn frames_follow_actions() {
        let api = ApiState::new(None);
        let r = post(&api, "/execute", json!({ "program": "DEF run m( move turnLeft move m)", "task": "Maze", "seed": 3 }));
        assert_eq!(r.status, 200);
        let n = r.body["actions"].as_array().unwrap().len();
        assert_eq!(r.body["frames"].as_array().unwrap().len(), n + 1);
        assert_eq!(r.body["flags"].as_array().unwrap().len(), n);
    }

    #[test]
    fn routing_errors() {
        let api = ApiState::new(None);
        assert_eq!(api.handle("GET", "/nope", b"").status, 404);
        assert_eq!(api.handle("GET", "/parse", b"").status, 405);
        assert_eq!(api.handle("POST", "/parse", b"{").status, 400);
        assert_eq!(post(&api, "/decode", json!({ "z": [0.0] })).status, 503);
    }
}
