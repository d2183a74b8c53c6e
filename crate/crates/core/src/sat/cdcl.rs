//! Embedded conflict-driven clause-learning solver: two watched literals per
//! clause, first-UIP learning with basic clause minimization, activity-driven
//! branching with phase saving, Luby restarts, and a MiniSat-style assumption
//! interface for incremental use.

use super::{Model, SatBackend, SolveError, SolveOutcome, SolveStatus, SolverStats};
use crate::cnf::Literal;
use std::time::Instant;

/// Internal literal: variable index shifted left, low bit set when negated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lit(u32);

impl Lit {
    #[inline]
    fn new(var: usize, positive: bool) -> Lit {
        Lit((var as u32) << 1 | (!positive as u32))
    }

    #[inline]
    fn var(self) -> usize {
        (self.0 >> 1) as usize
    }

    #[inline]
    fn positive(self) -> bool {
        self.0 & 1 == 0
    }

    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }

    fn from_public(l: Literal) -> Lit {
        Lit::new(l.var.index(), !l.negated)
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    #[inline]
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Val {
    True,
    False,
    Undef,
}

#[derive(Debug, Clone, Copy)]
struct Header {
    start: u32,
    len: u32,
    learnt: bool,
    deleted: bool,
    activity: f64,
}

type ClauseId = u32;

#[derive(Debug, Clone, Copy)]
struct Watch {
    clause: ClauseId,
    blocker: Lit,
}

/// Max-heap over variable activities with position tracking.
#[derive(Debug, Default)]
struct VarHeap {
    heap: Vec<u32>,
    pos: Vec<i32>,
}

impl VarHeap {
    fn contains(&self, v: usize) -> bool {
        v < self.pos.len() && self.pos[v] >= 0
    }

    fn grow(&mut self, n: usize) {
        while self.pos.len() < n {
            self.pos.push(-1);
        }
    }

    fn push(&mut self, v: usize, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.pos[v] = self.heap.len() as i32;
        self.heap.push(v as u32);
        self.sift_up(self.heap.len() - 1, act);
    }

    fn pop(&mut self, act: &[f64]) -> Option<usize> {
        let top = *self.heap.first()? as usize;
        self.pos[top] = -1;
        let last = self.heap.pop().unwrap();
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last as usize] = 0;
            self.sift_down(0, act);
        }
        Some(top)
    }

    fn bumped(&mut self, v: usize, act: &[f64]) {
        if self.contains(v) {
            let i = self.pos[v] as usize;
            self.sift_up(i, act);
        }
    }

    fn sift_up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let parent = (i - 1) >> 1;
            let pv = self.heap[parent];
            if act[v as usize] <= act[pv as usize] {
                break;
            }
            self.heap[i] = pv;
            self.pos[pv as usize] = i as i32;
            i = parent;
        }
        self.heap[i] = v;
        self.pos[v as usize] = i as i32;
    }

    fn sift_down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        loop {
            let left = 2 * i + 1;
            if left >= self.heap.len() {
                break;
            }
            let right = left + 1;
            let child = if right < self.heap.len()
                && act[self.heap[right] as usize] > act[self.heap[left] as usize]
            {
                right
            } else {
                left
            };
            if act[self.heap[child] as usize] <= act[v as usize] {
                break;
            }
            self.heap[i] = self.heap[child];
            self.pos[self.heap[i] as usize] = i as i32;
            i = child;
        }
        self.heap[i] = v;
        self.pos[v as usize] = i as i32;
    }
}

enum SearchOutcome {
    Sat,
    Unsat,
    UnsatUnderAssumptions,
    Restart,
    Timeout,
}

pub struct CdclSolver {
    ok: bool,
    n_vars: usize,

    lits: Vec<Lit>,
    headers: Vec<Header>,
    learnts: Vec<ClauseId>,
    n_problem_clauses: usize,

    watches: Vec<Vec<Watch>>,
    assigns: Vec<Val>,
    level: Vec<u32>,
    reason: Vec<Option<ClauseId>>,
    polarity: Vec<bool>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,

    activity: Vec<f64>,
    heap: VarHeap,
    var_inc: f64,
    cla_inc: f64,
    seen: Vec<bool>,

    max_learnts: f64,
    learntsize_adjust_confl: f64,
    learntsize_adjust_cnt: i64,

    deadline: Option<Instant>,
    stats: SolverStats,
}

impl Default for CdclSolver {
    fn default() -> Self {
        Self::new()
    }
}

const VAR_DECAY: f64 = 0.95;
const CLA_DECAY: f64 = 0.999;
const RESTART_FIRST: f64 = 100.0;

impl CdclSolver {
    pub fn new() -> CdclSolver {
        CdclSolver {
            ok: true,
            n_vars: 0,
            lits: Vec::new(),
            headers: Vec::new(),
            learnts: Vec::new(),
            n_problem_clauses: 0,
            watches: Vec::new(),
            assigns: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            polarity: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            heap: VarHeap::default(),
            var_inc: 1.0,
            cla_inc: 1.0,
            seen: Vec::new(),
            max_learnts: 0.0,
            learntsize_adjust_confl: 100.0,
            learntsize_adjust_cnt: 100,
            deadline: None,
            stats: SolverStats::default(),
        }
    }

    #[inline]
    fn value(&self, l: Lit) -> Val {
        match self.assigns[l.var()] {
            Val::Undef => Val::Undef,
            Val::True => {
                if l.positive() {
                    Val::True
                } else {
                    Val::False
                }
            }
            Val::False => {
                if l.positive() {
                    Val::False
                } else {
                    Val::True
                }
            }
        }
    }

    #[inline]
    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn new_decision_level(&mut self) {
        self.trail_lim.push(self.trail.len());
    }

    fn enqueue(&mut self, l: Lit, reason: Option<ClauseId>) {
        debug_assert_eq!(self.value(l), Val::Undef);
        let v = l.var();
        self.assigns[v] = if l.positive() { Val::True } else { Val::False };
        self.level[v] = self.decision_level() as u32;
        self.reason[v] = reason;
        self.trail.push(l);
    }

    fn cancel_until(&mut self, target: usize) {
        if self.decision_level() <= target {
            return;
        }
        let boundary = self.trail_lim[target];
        for i in (boundary..self.trail.len()).rev() {
            let l = self.trail[i];
            let v = l.var();
            self.assigns[v] = Val::Undef;
            self.polarity[v] = l.positive();
            self.reason[v] = None;
            self.heap.push(v, &self.activity);
        }
        self.trail.truncate(boundary);
        self.trail_lim.truncate(target);
        self.qhead = boundary;
    }

    fn bump_var(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in self.activity.iter_mut() {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.bumped(v, &self.activity);
    }

    fn bump_clause(&mut self, c: ClauseId) {
        let h = &mut self.headers[c as usize];
        h.activity += self.cla_inc;
        if h.activity > 1e20 {
            for &id in &self.learnts {
                self.headers[id as usize].activity *= 1e-20;
            }
            self.cla_inc *= 1e-20;
        }
    }

    fn alloc_clause(&mut self, lits: &[Lit], learnt: bool) -> ClauseId {
        let id = self.headers.len() as ClauseId;
        self.headers.push(Header {
            start: self.lits.len() as u32,
            len: lits.len() as u32,
            learnt,
            deleted: false,
            activity: 0.0,
        });
        self.lits.extend_from_slice(lits);
        self.watches[(!lits[0]).idx()].push(Watch { clause: id, blocker: lits[1] });
        self.watches[(!lits[1]).idx()].push(Watch { clause: id, blocker: lits[0] });
        if learnt {
            self.learnts.push(id);
        }
        id
    }

    fn clause(&self, id: ClauseId) -> &[Lit] {
        let h = &self.headers[id as usize];
        &self.lits[h.start as usize..(h.start + h.len) as usize]
    }

    /// Unit propagation; returns the conflicting clause if one arises.
    fn propagate(&mut self) -> Option<ClauseId> {
        let mut conflict = None;
        'outer: while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.stats.propagations += 1;
            let not_p = !p;

            let mut ws = std::mem::take(&mut self.watches[p.idx()]);
            let mut i = 0;
            let mut kept = 0;
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if self.value(w.blocker) == Val::True {
                    ws[kept] = w;
                    kept += 1;
                    continue;
                }
                let h = self.headers[w.clause as usize];
                let start = h.start as usize;
                let len = h.len as usize;
                debug_assert!(!h.deleted);
                if self.lits[start] == not_p {
                    self.lits.swap(start, start + 1);
                }
                debug_assert_eq!(self.lits[start + 1], not_p);
                let first = self.lits[start];
                let w_new = Watch { clause: w.clause, blocker: first };
                if first != w.blocker && self.value(first) == Val::True {
                    ws[kept] = w_new;
                    kept += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..len {
                    if self.value(self.lits[start + k]) != Val::False {
                        self.lits.swap(start + 1, start + k);
                        let target = (!self.lits[start + 1]).idx();
                        self.watches[target].push(w_new);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[kept] = w_new;
                kept += 1;
                match self.value(first) {
                    Val::False => {
                        // conflict: keep the unprocessed tail of the list
                        while i < ws.len() {
                            ws[kept] = ws[i];
                            kept += 1;
                            i += 1;
                        }
                        ws.truncate(kept);
                        self.watches[p.idx()] = ws;
                        self.qhead = self.trail.len();
                        conflict = Some(w.clause);
                        break 'outer;
                    }
                    Val::Undef => self.enqueue(first, Some(w.clause)),
                    Val::True => {}
                }
            }
            ws.truncate(kept);
            self.watches[p.idx()] = ws;
        }
        conflict
    }

    /// First-UIP conflict analysis; returns the learnt clause (asserting
    /// literal first) and the backjump level.
    fn analyze(&mut self, mut confl: ClauseId) -> (Vec<Lit>, usize) {
        let mut learnt: Vec<Lit> = vec![Lit(0)];
        let mut path_count = 0u32;
        let mut p: Option<Lit> = None;
        let mut index = self.trail.len();
        let current_level = self.decision_level() as u32;

        loop {
            if self.headers[confl as usize].learnt {
                self.bump_clause(confl);
            }
            let h = self.headers[confl as usize];
            let start = h.start as usize;
            let skip = usize::from(p.is_some());
            for k in skip..h.len as usize {
                let q = self.lits[start + k];
                let v = q.var();
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump_var(v);
                    if self.level[v] >= current_level {
                        path_count += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                index -= 1;
                if self.seen[self.trail[index].var()] {
                    break;
                }
            }
            let pl = self.trail[index];
            self.seen[pl.var()] = false;
            path_count -= 1;
            p = Some(pl);
            if path_count == 0 {
                break;
            }
            confl = self.reason[pl.var()].expect("resolved variable must be implied");
        }
        learnt[0] = !p.unwrap();

        // basic minimization: a literal is redundant when its reason clause
        // only contains seen or root-level literals
        let to_clear: Vec<Lit> = learnt.clone();
        let mut j = 1;
        for i in 1..learnt.len() {
            let q = learnt[i];
            let keep = match self.reason[q.var()] {
                None => true,
                Some(r) => self
                    .clause(r)
                    .iter()
                    .skip(1)
                    .any(|l| !self.seen[l.var()] && self.level[l.var()] > 0),
            };
            if keep {
                learnt[j] = q;
                j += 1;
            }
        }
        learnt.truncate(j);

        let backtrack = if learnt.len() == 1 {
            0
        } else {
            let mut max_i = 1;
            for i in 2..learnt.len() {
                if self.level[learnt[i].var()] > self.level[learnt[max_i].var()] {
                    max_i = i;
                }
            }
            learnt.swap(1, max_i);
            self.level[learnt[1].var()] as usize
        };
        for l in to_clear {
            self.seen[l.var()] = false;
        }
        (learnt, backtrack)
    }

    fn locked(&self, id: ClauseId) -> bool {
        let first = self.clause(id)[0];
        self.value(first) == Val::True && self.reason[first.var()] == Some(id)
    }

    fn detach(&mut self, id: ClauseId) {
        let (w0, w1) = {
            let c = self.clause(id);
            ((!c[0]).idx(), (!c[1]).idx())
        };
        for wl in [w0, w1] {
            let pos = self.watches[wl]
                .iter()
                .position(|w| w.clause == id)
                .expect("watched clause present");
            self.watches[wl].swap_remove(pos);
        }
        self.headers[id as usize].deleted = true;
    }

    /// Removes roughly half of the learnt clauses, lowest activity first.
    fn reduce_learnts(&mut self) {
        let extra_lim = self.cla_inc / self.learnts.len().max(1) as f64;
        let headers = &self.headers;
        self.learnts.sort_unstable_by(|&a, &b| {
            let (ha, hb) = (&headers[a as usize], &headers[b as usize]);
            (ha.len <= 2)
                .cmp(&(hb.len <= 2))
                .then(ha.activity.partial_cmp(&hb.activity).unwrap())
        });
        let half = self.learnts.len() / 2;
        let mut keep = Vec::with_capacity(self.learnts.len());
        for (i, &id) in self.learnts.clone().iter().enumerate() {
            let h = self.headers[id as usize];
            let removable = h.len > 2
                && !self.locked(id)
                && (i < half || h.activity < extra_lim);
            if removable {
                self.detach(id);
            } else {
                keep.push(id);
            }
        }
        self.learnts = keep;
    }

    fn pick_branch_lit(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.assigns[v] == Val::Undef {
                return Some(Lit::new(v, self.polarity[v]));
            }
        }
        None
    }

    fn out_of_time(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() > d)
    }

    fn search(&mut self, conflict_budget: f64, assumptions: &[Lit]) -> SearchOutcome {
        let mut conflicts_here = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.stats.conflicts += 1;
                conflicts_here += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return SearchOutcome::Unsat;
                }
                let (learnt, backtrack) = self.analyze(confl);
                self.cancel_until(backtrack);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let id = self.alloc_clause(&learnt, true);
                    self.bump_clause(id);
                    self.enqueue(learnt[0], Some(id));
                }
                self.var_inc /= VAR_DECAY;
                self.cla_inc /= CLA_DECAY;

                self.learntsize_adjust_cnt -= 1;
                if self.learntsize_adjust_cnt <= 0 {
                    self.learntsize_adjust_confl *= 1.5;
                    self.learntsize_adjust_cnt = self.learntsize_adjust_confl as i64;
                    self.max_learnts *= 1.1;
                }
                if conflicts_here.is_multiple_of(64) && self.out_of_time() {
                    return SearchOutcome::Timeout;
                }
            } else {
                if conflicts_here as f64 >= conflict_budget {
                    self.cancel_until(0);
                    return SearchOutcome::Restart;
                }
                if self.learnts.len() as f64 - self.trail.len() as f64 >= self.max_learnts {
                    self.reduce_learnts();
                }
                let mut next = None;
                while self.decision_level() < assumptions.len() {
                    let p = assumptions[self.decision_level()];
                    match self.value(p) {
                        Val::True => self.new_decision_level(),
                        Val::False => return SearchOutcome::UnsatUnderAssumptions,
                        Val::Undef => {
                            next = Some(p);
                            break;
                        }
                    }
                }
                if next.is_none() {
                    next = self.pick_branch_lit();
                    if next.is_none() {
                        return SearchOutcome::Sat;
                    }
                    self.stats.decisions += 1;
                }
                self.new_decision_level();
                self.enqueue(next.unwrap(), None);
            }
        }
    }

    fn luby(i: u64) -> f64 {
        // restart multiplier sequence 1,1,2,1,1,2,4,...
        let mut size = 1u64;
        let mut seq = 0u32;
        let mut x = i;
        while size < x + 1 {
            seq += 1;
            size = 2 * size + 1;
        }
        while size - 1 != x {
            size = (size - 1) / 2;
            seq -= 1;
            x %= size;
        }
        2f64.powi(seq as i32)
    }
}

impl SatBackend for CdclSolver {
    fn ensure_vars(&mut self, var_count: u32) {
        while self.n_vars < var_count as usize {
            let v = self.n_vars;
            self.n_vars += 1;
            self.assigns.push(Val::Undef);
            self.level.push(0);
            self.reason.push(None);
            self.polarity.push(false);
            self.activity.push(0.0);
            self.seen.push(false);
            self.watches.push(Vec::new());
            self.watches.push(Vec::new());
            self.heap.grow(self.n_vars);
            self.heap.push(v, &self.activity);
        }
    }

    fn add_clause(&mut self, lits: &[Literal]) {
        debug_assert_eq!(self.decision_level(), 0);
        if !self.ok {
            return;
        }
        if let Some(max) = lits.iter().map(|l| l.var.0).max() {
            self.ensure_vars(max);
        }
        let mut clause: Vec<Lit> = lits.iter().map(|&l| Lit::from_public(l)).collect();
        clause.sort_unstable_by_key(|l| l.0);
        clause.dedup();
        let mut simplified = Vec::with_capacity(clause.len());
        for (i, &l) in clause.iter().enumerate() {
            if i > 0 && clause[i - 1] == !l {
                return; // tautology
            }
            match self.value(l) {
                Val::True => return, // already satisfied at root level
                Val::False => {}     // dropped
                Val::Undef => simplified.push(l),
            }
        }
        match simplified.len() {
            0 => self.ok = false,
            1 => {
                self.enqueue(simplified[0], None);
                if self.propagate().is_some() {
                    self.ok = false;
                }
            }
            _ => {
                self.alloc_clause(&simplified, false);
                self.n_problem_clauses += 1;
            }
        }
    }

    fn solve_under(&mut self, assumptions: &[Literal]) -> Result<SolveOutcome, SolveError> {
        self.stats.solves += 1;
        self.cancel_until(0);
        if !self.ok {
            return Ok(SolveOutcome { status: SolveStatus::Unsatisfiable, model: None });
        }
        if self.propagate().is_some() {
            self.ok = false;
            return Ok(SolveOutcome { status: SolveStatus::Unsatisfiable, model: None });
        }
        let assumps: Vec<Lit> = assumptions.iter().map(|&l| Lit::from_public(l)).collect();
        if self.max_learnts < 1.0 {
            self.max_learnts = (self.n_problem_clauses as f64 / 3.0).max(1000.0);
        }
        let mut restarts = 0u64;
        loop {
            if self.out_of_time() {
                self.cancel_until(0);
                return Err(SolveError::Timeout);
            }
            let budget = Self::luby(restarts) * RESTART_FIRST;
            match self.search(budget, &assumps) {
                SearchOutcome::Sat => {
                    let model =
                        Model(self.assigns.iter().map(|&v| v == Val::True).collect());
                    self.cancel_until(0);
                    return Ok(SolveOutcome {
                        status: SolveStatus::Satisfiable,
                        model: Some(model),
                    });
                }
                SearchOutcome::Unsat => {
                    self.cancel_until(0);
                    return Ok(SolveOutcome {
                        status: SolveStatus::Unsatisfiable,
                        model: None,
                    });
                }
                SearchOutcome::UnsatUnderAssumptions => {
                    self.cancel_until(0);
                    return Ok(SolveOutcome {
                        status: SolveStatus::Unsatisfiable,
                        model: None,
                    });
                }
                SearchOutcome::Restart => restarts += 1,
                SearchOutcome::Timeout => {
                    self.cancel_until(0);
                    return Err(SolveError::Timeout);
                }
            }
        }
    }

    fn set_deadline(&mut self, deadline: Option<Instant>) {
        self.deadline = deadline;
    }

    fn stats(&self) -> SolverStats {
        self.stats
    }
}
