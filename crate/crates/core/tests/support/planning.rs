//! Random planning problems and an independent breadth-first oracle.
//!
//! The oracle works on the generator's own description (schema kinds,
//! names) with hand-written transition rules. It shares no code with the
//! planner's grounding or search.

use std::collections::{BTreeSet, HashSet, VecDeque};

use hearth_core::deliberative::domain::{ActionDecl, FluentDecl, ObjectDecl, ParamDecl, SkillBindingDecl, TypeDecl};
use hearth_core::deliberative::{Domain, DomainFile, Fluent, Goal, Literal};
use hearth_core::kb::{Attribute, EntityKind, KnowledgeBase, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ROBOT: &str = "r";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Schema {
    Move,
    Pick,
    Drop,
    Light,
    Jump,
}

pub const POOL: [Schema; 5] = [Schema::Move, Schema::Pick, Schema::Drop, Schema::Light, Schema::Jump];

pub type Atom = (String, Vec<String>);

fn atom(name: &str, args: &[&str]) -> Atom {
    (name.to_string(), args.iter().map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub seed: u64,
    pub locs: Vec<String>,
    pub objs: Vec<String>,
    pub schemas: Vec<Schema>,
    pub init: BTreeSet<Atom>,
    pub goal: Vec<(Atom, bool)>,
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl Problem {
    /// Up to 5 locations, 6 objects and 3 schemas. Half of the goals come
    /// from a random walk (usually solvable), the rest are arbitrary.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let locs = names("l", rng.gen_range(1..=5));
        let objs = names("o", rng.gen_range(1..=6));
        let mut pool = POOL.to_vec();
        pool.shuffle(&mut rng);
        let mut schemas: Vec<Schema> = pool[..rng.gen_range(1..=3)].to_vec();
        schemas.sort();

        let mut init = BTreeSet::new();
        init.insert(atom("at", &[ROBOT, locs.choose(&mut rng).unwrap()]));
        init.insert(atom("free", &[ROBOT]));
        for a in &locs {
            for b in &locs {
                if a != b && rng.gen_bool(0.5) {
                    init.insert(atom("adj", &[a, b]));
                }
            }
            if rng.gen_bool(0.2) {
                init.insert(atom("blocked", &[a]));
            }
        }
        for o in &objs {
            init.insert(atom("at", &[o, locs.choose(&mut rng).unwrap()]));
            if rng.gen_bool(0.3) {
                init.insert(atom("lit", &[o]));
            }
        }
        let mut p = Problem {
            seed,
            locs,
            objs,
            schemas,
            init,
            goal: Vec::new(),
        };
        p.goal = if rng.gen_bool(0.5) {
            p.walk_goal(&mut rng)
        } else {
            p.arbitrary_goal(&mut rng)
        };
        p
    }

    fn candidate_atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        for l in &self.locs {
            out.push(atom("at", &[ROBOT, l]));
            for o in &self.objs {
                out.push(atom("at", &[o, l]));
            }
        }
        for o in &self.objs {
            out.push(atom("holding", &[ROBOT, o]));
            out.push(atom("lit", &[o]));
        }
        out
    }

    fn arbitrary_goal(&self, rng: &mut ChaCha8Rng) -> Vec<(Atom, bool)> {
        let atoms = self.candidate_atoms();
        let n = rng.gen_range(1..=2);
        let mut goal: Vec<(Atom, bool)> = Vec::new();
        while goal.len() < n {
            let a = atoms.choose(rng).unwrap().clone();
            if goal.iter().all(|(g, _)| *g != a) {
                goal.push((a, rng.gen_bool(0.85)));
            }
        }
        goal
    }

    fn walk_goal(&self, rng: &mut ChaCha8Rng) -> Vec<(Atom, bool)> {
        let mut state = self.init.clone();
        for _ in 0..rng.gen_range(0..=8) {
            let next = self.successors(&state);
            match next.choose(rng) {
                Some((_, s)) => state = s.clone(),
                None => break,
            }
        }
        let facts: Vec<&Atom> = state
            .iter()
            .filter(|(n, _)| matches!(n.as_str(), "at" | "holding" | "lit"))
            .collect();
        let n = rng.gen_range(1..=2).min(facts.len());
        let mut goal: Vec<(Atom, bool)> = Vec::new();
        while goal.len() < n {
            let a = (*facts.choose(rng).unwrap()).clone();
            if goal.iter().all(|(g, _)| *g != a) {
                goal.push((a, true));
            }
        }
        goal
    }

    /// Every applicable ground action with its label and successor.
    pub fn successors(&self, s: &BTreeSet<Atom>) -> Vec<(String, BTreeSet<Atom>)> {
        let has = |n: &str, args: &[&str]| s.contains(&atom(n, args));
        let mut out = Vec::new();
        let mut emit = |label: String, del: Vec<Atom>, add: Vec<Atom>| {
            let mut next = s.clone();
            for d in &del {
                next.remove(d);
            }
            next.extend(add);
            out.push((label, next));
        };
        for schema in &self.schemas {
            match schema {
                Schema::Move | Schema::Jump => {
                    for a in &self.locs {
                        for b in &self.locs {
                            let ok = has("at", &[ROBOT, a])
                                && match schema {
                                    Schema::Move => has("adj", &[a, b]),
                                    _ => !has("blocked", &[b]),
                                };
                            if ok {
                                let name = if *schema == Schema::Move { "move" } else { "jump" };
                                emit(
                                    format!("{name}({a},{b})"),
                                    vec![atom("at", &[ROBOT, a])],
                                    vec![atom("at", &[ROBOT, b])],
                                );
                            }
                        }
                    }
                }
                Schema::Pick => {
                    for o in &self.objs {
                        for l in &self.locs {
                            if has("at", &[ROBOT, l]) && has("at", &[o, l]) && has("free", &[ROBOT]) {
                                emit(
                                    format!("pick({o},{l})"),
                                    vec![atom("at", &[o, l]), atom("free", &[ROBOT])],
                                    vec![atom("holding", &[ROBOT, o])],
                                );
                            }
                        }
                    }
                }
                Schema::Drop => {
                    for o in &self.objs {
                        for l in &self.locs {
                            if has("at", &[ROBOT, l]) && has("holding", &[ROBOT, o]) {
                                emit(
                                    format!("drop({o},{l})"),
                                    vec![atom("holding", &[ROBOT, o])],
                                    vec![atom("at", &[o, l]), atom("free", &[ROBOT])],
                                );
                            }
                        }
                    }
                }
                Schema::Light => {
                    for o in &self.objs {
                        for l in &self.locs {
                            if has("at", &[ROBOT, l]) && has("at", &[o, l]) && !has("lit", &[o]) {
                                emit(format!("light({o},{l})"), vec![], vec![atom("lit", &[o])]);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn goal_holds(&self, s: &BTreeSet<Atom>) -> bool {
        self.goal.iter().all(|(a, pos)| s.contains(a) == *pos)
    }

    /// Replays labelled steps with the oracle's rules.
    pub fn replay(&self, labels: &[String]) -> Option<BTreeSet<Atom>> {
        let mut s = self.init.clone();
        for l in labels {
            s = self.successors(&s).into_iter().find(|(n, _)| n == l)?.1;
        }
        Some(s)
    }

    /// Shortest plan length within `horizon`, by breadth-first search.
    pub fn oracle(&self, horizon: usize) -> Option<usize> {
        if self.goal_holds(&self.init) {
            return Some(0);
        }
        let mut seen: HashSet<BTreeSet<Atom>> = HashSet::new();
        seen.insert(self.init.clone());
        let mut queue = VecDeque::from([(self.init.clone(), 0usize)]);
        while let Some((s, d)) = queue.pop_front() {
            if d == horizon {
                continue;
            }
            for (_, next) in self.successors(&s) {
                if self.goal_holds(&next) {
                    return Some(d + 1);
                }
                if seen.insert(next.clone()) {
                    queue.push_back((next, d + 1));
                }
            }
        }
        None
    }

    pub fn domain_file(&self) -> DomainFile {
        let ty = |name: &str, parent: Option<&str>| TypeDecl {
            name: name.into(),
            parent: parent.map(Into::into),
        };
        let mut objects = vec![ObjectDecl {
            name: ROBOT.into(),
            ty: "bot".into(),
        }];
        objects.extend(self.locs.iter().map(|l| ObjectDecl {
            name: l.clone(),
            ty: "loc".into(),
        }));
        objects.extend(self.objs.iter().map(|o| ObjectDecl {
            name: o.clone(),
            ty: "obj".into(),
        }));
        let fluent = |name: &str, params: &[&str]| FluentDecl {
            name: name.into(),
            params: params.iter().map(|p| p.to_string()).collect(),
        };
        let lit = |parts: &[&str]| parts.iter().map(|p| p.to_string()).collect::<Vec<_>>();
        let param = |name: &str, ty: &str| ParamDecl {
            name: name.into(),
            ty: ty.into(),
        };
        let action = |name: &str, params: Vec<ParamDecl>, pre: Vec<Vec<String>>, add, del| ActionDecl {
            name: name.into(),
            params,
            pre,
            add,
            del,
            skill: SkillBindingDecl {
                name: "act".into(),
                args: Default::default(),
            },
            cost: 1.0,
        };
        let actions = self
            .schemas
            .iter()
            .map(|s| match s {
                Schema::Move => action(
                    "move",
                    vec![param("a", "loc"), param("b", "loc")],
                    vec![lit(&["at", ROBOT, "?a"]), lit(&["adj", "?a", "?b"])],
                    vec![lit(&["at", ROBOT, "?b"])],
                    vec![lit(&["at", ROBOT, "?a"])],
                ),
                Schema::Jump => action(
                    "jump",
                    vec![param("a", "loc"), param("b", "loc")],
                    vec![lit(&["at", ROBOT, "?a"]), lit(&["not", "blocked", "?b"])],
                    vec![lit(&["at", ROBOT, "?b"])],
                    vec![lit(&["at", ROBOT, "?a"])],
                ),
                Schema::Pick => action(
                    "pick",
                    vec![param("o", "obj"), param("l", "loc")],
                    vec![lit(&["at", ROBOT, "?l"]), lit(&["at", "?o", "?l"]), lit(&["free", ROBOT])],
                    vec![lit(&["holding", ROBOT, "?o"])],
                    vec![lit(&["at", "?o", "?l"]), lit(&["free", ROBOT])],
                ),
                Schema::Drop => action(
                    "drop",
                    vec![param("o", "obj"), param("l", "loc")],
                    vec![lit(&["at", ROBOT, "?l"]), lit(&["holding", ROBOT, "?o"])],
                    vec![lit(&["at", "?o", "?l"]), lit(&["free", ROBOT])],
                    vec![lit(&["holding", ROBOT, "?o"])],
                ),
                Schema::Light => action(
                    "light",
                    vec![param("o", "obj"), param("l", "loc")],
                    vec![lit(&["at", ROBOT, "?l"]), lit(&["at", "?o", "?l"]), lit(&["not", "lit", "?o"])],
                    vec![lit(&["lit", "?o"])],
                    vec![],
                ),
            })
            .collect();
        DomainFile {
            types: vec![
                ty("thing", None),
                ty("loc", Some("thing")),
                ty("obj", Some("thing")),
                ty("bot", Some("thing")),
            ],
            objects,
            fluents: vec![
                fluent("at", &["thing", "loc"]),
                fluent("adj", &["loc", "loc"]),
                fluent("holding", &["bot", "obj"]),
                fluent("free", &["bot"]),
                fluent("lit", &["obj"]),
                fluent("blocked", &["loc"]),
            ],
            actions,
        }
    }

    /// Loads the domain and writes the initial facts into a fresh KB.
    pub fn install(&self) -> (KnowledgeBase, Domain) {
        let mut kb = KnowledgeBase::new();
        let domain = Domain::load(&self.domain_file(), &mut kb).expect("generated domain loads");
        for (name, args) in &self.init {
            let subject = kb.lookup(EntityKind::Instance, &args[0]).unwrap();
            let value = match args.get(1) {
                Some(o) => Value::Entity(kb.lookup(EntityKind::Instance, o).unwrap()),
                None => Value::truth(),
            };
            kb.assert_attr(Attribute::new(subject, name.clone(), value)).unwrap();
        }
        (kb, domain)
    }

    pub fn goal_for(&self, kb: &KnowledgeBase) -> Goal {
        let literals = self
            .goal
            .iter()
            .map(|((name, args), pos)| {
                let ids: Vec<_> = args.iter().map(|a| kb.lookup(EntityKind::Instance, a).unwrap()).collect();
                let f = Fluent::new(name.clone(), ids);
                if *pos {
                    Literal::pos(f)
                } else {
                    Literal::neg(f)
                }
            })
            .collect();
        Goal::new(literals).expect("non-empty goal")
    }
}
