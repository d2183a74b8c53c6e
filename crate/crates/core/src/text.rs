//! Line-oriented text formats: graphs, relation lists, experiment lists,
//! background knowledge, solution output, and the query expression grammar.
//! Lines starting with `#` are comments; empty node sets are written `-`.

use crate::discovery::{Assumptions, EdgeSolution, QueryVerdict, Status};
use crate::encoder::{BackgroundConstraint, QueryExpr};
use crate::graph::{
    Experiment, MixedGraph, NodeId, NodeSet, Relation, TestSpec,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, message: message.into() })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            None
        } else {
            Some((i + 1, body))
        }
    })
}

fn resolve(names: &[String], token: &str, line: usize) -> Result<NodeId, ParseError> {
    names
        .iter()
        .position(|n| n == token)
        .map(|i| NodeId(i as u32))
        .ok_or(ParseError { line, message: format!("unknown node `{token}`") })
}

fn parse_node_list(
    names: &[String],
    tokens: &[&str],
    line: usize,
) -> Result<NodeSet, ParseError> {
    if tokens == ["-"] {
        return Ok(NodeSet::EMPTY);
    }
    let mut set = NodeSet::EMPTY;
    for t in tokens {
        set.insert(resolve(names, t, line)?);
    }
    Ok(set)
}

fn format_node_list(names: &[String], set: NodeSet) -> String {
    if set.is_empty() {
        "-".to_string()
    } else {
        set.iter().map(|v| names[v.index()].clone()).collect::<Vec<_>>().join(" ")
    }
}

/// Parses the graph format: a `nodes:` header then `edge a -> b` /
/// `edge a <-> b` lines.
pub fn parse_graph(text: &str) -> Result<MixedGraph, ParseError> {
    let mut graph: Option<MixedGraph> = None;
    for (line, body) in content_lines(text) {
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens[0] == "nodes:" {
            if graph.is_some() {
                return err(line, "duplicate nodes: header");
            }
            let names: Vec<String> = tokens[1..].iter().map(|s| s.to_string()).collect();
            graph = Some(
                MixedGraph::new(names)
                    .map_err(|e| ParseError { line, message: e.to_string() })?,
            );
        } else if tokens[0] == "edge" {
            let g = match graph.as_mut() {
                Some(g) => g,
                None => return err(line, "edge before nodes: header"),
            };
            if tokens.len() != 4 {
                return err(line, "expected `edge a -> b` or `edge a <-> b`");
            }
            let x = g
                .node_by_name(tokens[1])
                .ok_or(ParseError { line, message: format!("unknown node `{}`", tokens[1]) })?;
            let y = g
                .node_by_name(tokens[3])
                .ok_or(ParseError { line, message: format!("unknown node `{}`", tokens[3]) })?;
            let result = match tokens[2] {
                "->" => g.add_directed(x, y),
                "<->" => g.add_bidirected(x, y),
                other => return err(line, format!("unknown edge kind `{other}`")),
            };
            result.map_err(|e| ParseError { line, message: e.to_string() })?;
        } else {
            return err(line, format!("unexpected directive `{}`", tokens[0]));
        }
    }
    graph.ok_or(ParseError { line: 0, message: "missing nodes: header".into() })
}

pub fn print_graph(g: &MixedGraph) -> String {
    let mut out = format!("nodes: {}\n", g.names().join(" "));
    for (x, y) in g.directed_edges() {
        out.push_str(&format!("edge {} -> {}\n", g.name(x), g.name(y)));
    }
    for (x, y) in g.bidirected_edges() {
        out.push_str(&format!("edge {} <-> {}\n", g.name(x), g.name(y)));
    }
    out
}

/// Parses relation lines `sep x y | c1 c2 || j1 j2` / `con ...`. A leading
/// `nodes:` header fixes the universe; otherwise pass it via `names`.
/// Returns the universe actually used and the relations.
pub fn parse_relations(
    text: &str,
    names: Option<Vec<String>>,
) -> Result<(Vec<String>, Vec<Relation>), ParseError> {
    let mut names = names;
    let mut relations = Vec::new();
    for (line, body) in content_lines(text) {
        let tokens: Vec<&str> = body.split_whitespace().collect();
        match tokens[0] {
            "nodes:" => {
                let header: Vec<String> = tokens[1..].iter().map(|s| s.to_string()).collect();
                match &names {
                    // an explicit universe wins; the header must agree on names
                    Some(existing) => {
                        for h in &header {
                            if !existing.contains(h) {
                                return err(
                                    line,
                                    format!("header node `{h}` missing from --nodes"),
                                );
                            }
                        }
                    }
                    None => names = Some(header),
                }
            }
            "sep" | "con" => {
                let connected = tokens[0] == "con";
                let names = match &names {
                    Some(n) => n,
                    None => return err(line, "no node universe: give a nodes: header first"),
                };
                if tokens.len() < 3 {
                    return err(line, "expected `sep x y | C || J`");
                }
                let x = resolve(names, tokens[1], line)?;
                let y = resolve(names, tokens[2], line)?;
                let rest = &tokens[3..];
                let (c_tokens, j_tokens) = match rest.iter().position(|&t| t == "|") {
                    Some(0) => {
                        let after = &rest[1..];
                        match after.iter().position(|&t| t == "||") {
                            Some(p) => (&after[..p], &after[p + 1..]),
                            None => (after, &[][..]),
                        }
                    }
                    Some(_) => return err(line, "expected `|` right after the endpoints"),
                    None => match rest.iter().position(|&t| t == "||") {
                        Some(0) => (&[][..], &rest[1..]),
                        Some(_) => return err(line, "malformed separators"),
                        None if rest.is_empty() => (&[][..], &[][..]),
                        None => return err(line, "expected `|` or `||` before node lists"),
                    },
                };
                let c = parse_node_list(names, c_tokens, line)?;
                let j = parse_node_list(names, j_tokens, line)?;
                let spec = TestSpec::new(x, y, c, j)
                    .map_err(|e| ParseError { line, message: e.to_string() })?;
                relations.push(Relation { spec, connected });
            }
            other => return err(line, format!("unexpected directive `{other}`")),
        }
    }
    match names {
        Some(names) => Ok((names, relations)),
        None => err(0, "no node universe: give --nodes or a nodes: header"),
    }
}

pub fn print_relations(names: &[String], relations: &[Relation], header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str(&format!("nodes: {}\n", names.join(" ")));
    }
    for r in relations {
        out.push_str(&format!(
            "{} {} {} | {} || {}\n",
            if r.connected { "con" } else { "sep" },
            names[r.spec.x.index()],
            names[r.spec.y.index()],
            format_node_list(names, r.spec.conditioning),
            format_node_list(names, r.spec.intervention),
        ));
    }
    out
}

/// Parses experiment lines `exp v1 v2 v3 || j1` (the second list is the
/// intervened subset, `-` when passive).
pub fn parse_experiments(
    text: &str,
    names: &[String],
) -> Result<Vec<Experiment>, ParseError> {
    let mut out = Vec::new();
    for (line, body) in content_lines(text) {
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens[0] != "exp" {
            return err(line, format!("unexpected directive `{}`", tokens[0]));
        }
        let rest = &tokens[1..];
        let (v_tokens, j_tokens) = match rest.iter().position(|&t| t == "||") {
            Some(p) => (&rest[..p], &rest[p + 1..]),
            None => (rest, &[][..]),
        };
        let observed = parse_node_list(names, v_tokens, line)?;
        let intervened = parse_node_list(names, j_tokens, line)?;
        if !intervened.is_subset_of(observed) {
            return err(line, "intervened nodes must be listed among the experiment's nodes");
        }
        out.push(Experiment::new(observed, intervened));
    }
    Ok(out)
}

pub fn print_experiments(names: &[String], experiments: &[Experiment]) -> String {
    let mut out = String::new();
    for e in experiments {
        out.push_str(&format!(
            "exp {} || {}\n",
            format_node_list(names, e.observed),
            format_node_list(names, e.intervened),
        ));
    }
    out
}

/// Parses background knowledge: `assume acyclic`, `assume no-latents`,
/// `know edge x -> y present|absent`, `know ancestral x y present|absent`,
/// `know path x y [via w1 w2] [len <= L] present|absent`.
pub fn parse_knowledge(
    text: &str,
    names: &[String],
) -> Result<(Assumptions, Vec<BackgroundConstraint>), ParseError> {
    let mut assumptions = Assumptions::default();
    let mut constraints = Vec::new();
    for (line, body) in content_lines(text) {
        let tokens: Vec<&str> = body.split_whitespace().collect();
        match tokens[0] {
            "assume" => match tokens.get(1) {
                Some(&"acyclic") => assumptions.acyclic = true,
                Some(&"no-latents") => assumptions.no_latents = true,
                _ => return err(line, "expected `assume acyclic` or `assume no-latents`"),
            },
            "know" => {
                let polarity = match *tokens.last().unwrap() {
                    "present" => true,
                    "absent" => false,
                    other => {
                        return err(line, format!("expected present|absent, got `{other}`"))
                    }
                };
                match tokens.get(1) {
                    Some(&"edge") => {
                        if tokens.len() != 6 {
                            return err(line, "expected `know edge a -> b present|absent`");
                        }
                        let x = resolve(names, tokens[2], line)?;
                        let y = resolve(names, tokens[4], line)?;
                        let k = match tokens[3] {
                            "->" => BackgroundConstraint::DirectedEdge { x, y, present: polarity },
                            "<->" => {
                                BackgroundConstraint::BidirectedEdge { x, y, present: polarity }
                            }
                            other => return err(line, format!("unknown edge kind `{other}`")),
                        };
                        constraints.push(k);
                    }
                    Some(&"ancestral") => {
                        if tokens.len() != 5 {
                            return err(line, "expected `know ancestral x y present|absent`");
                        }
                        let x = resolve(names, tokens[2], line)?;
                        let y = resolve(names, tokens[3], line)?;
                        constraints.push(BackgroundConstraint::Ancestral {
                            x,
                            y,
                            present: polarity,
                        });
                    }
                    Some(&"path") => {
                        if tokens.len() < 5 {
                            return err(line, "expected `know path x y ... present|absent`");
                        }
                        let x = resolve(names, tokens[2], line)?;
                        let y = resolve(names, tokens[3], line)?;
                        let mut waypoints = Vec::new();
                        let mut max_len = None;
                        let mut i = 4;
                        let end = tokens.len() - 1;
                        while i < end {
                            match tokens[i] {
                                "via" => {
                                    i += 1;
                                    while i < end && tokens[i] != "len" {
                                        waypoints.push(resolve(names, tokens[i], line)?);
                                        i += 1;
                                    }
                                }
                                "len" => {
                                    if tokens.get(i + 1) != Some(&"<=") {
                                        return err(line, "expected `len <= L`");
                                    }
                                    max_len = Some(
                                        tokens
                                            .get(i + 2)
                                            .and_then(|t| t.parse::<u32>().ok())
                                            .ok_or(ParseError {
                                                line,
                                                message: "expected a length bound".into(),
                                            })?,
                                    );
                                    i += 3;
                                }
                                other => {
                                    return err(line, format!("unexpected token `{other}`"))
                                }
                            }
                        }
                        constraints.push(BackgroundConstraint::Path {
                            x,
                            y,
                            waypoints,
                            max_len,
                            present: polarity,
                        });
                    }
                    _ => return err(line, "expected `know edge|ancestral|path ...`"),
                }
            }
            other => return err(line, format!("unexpected directive `{other}`")),
        }
    }
    Ok((assumptions, constraints))
}

/// Solution lines: `dir x y status`, `bidir x y status`, and `anc x y status`
/// when ancestral relations were tracked.
pub fn print_solution(names: &[String], sol: &EdgeSolution) -> String {
    let mut out = String::new();
    for (x, y) in sol.ordered_pairs() {
        out.push_str(&format!(
            "dir {} {} {}\n",
            names[x.index()],
            names[y.index()],
            sol.directed(x, y).as_str()
        ));
    }
    for (x, y) in sol.unordered_pairs() {
        out.push_str(&format!(
            "bidir {} {} {}\n",
            names[x.index()],
            names[y.index()],
            sol.bidirected(x, y).as_str()
        ));
    }
    if sol.tracks_ancestral() {
        for (x, y) in sol.ordered_pairs() {
            out.push_str(&format!(
                "anc {} {} {}\n",
                names[x.index()],
                names[y.index()],
                sol.ancestral(x, y).as_str()
            ));
        }
    }
    out
}

pub fn parse_solution(
    text: &str,
    names: &[String],
) -> Result<Vec<(String, NodeId, NodeId, Status)>, ParseError> {
    let mut out = Vec::new();
    for (line, body) in content_lines(text) {
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.len() != 4 || !["dir", "bidir", "anc"].contains(&tokens[0]) {
            return err(line, "expected `dir|bidir|anc x y status`");
        }
        let x = resolve(names, tokens[1], line)?;
        let y = resolve(names, tokens[2], line)?;
        let status = match tokens[3] {
            "present" => Status::Present,
            "absent" => Status::Absent,
            "unknown" => Status::Unknown,
            other => return err(line, format!("unknown status `{other}`")),
        };
        out.push((tokens[0].to_string(), x, y, status));
    }
    Ok(out)
}

pub fn print_verdict(v: QueryVerdict) -> &'static str {
    v.as_str()
}

/// Recursive-descent parser for query expressions.
///
/// ```text
/// expr  := term ("or" term)*
/// term  := unary ("and" unary)*
/// unary := "not" unary | "(" expr ")" | atom
/// atom  := "edge" NAME (-> | <->) NAME
///        | "anc" NAME NAME
///        | "con" "(" NAME NAME [ "|" NAMES ] [ "||" NAMES ] ")"
///        | "sep" "(" NAME NAME [ "|" NAMES ] [ "||" NAMES ] ")"
///        | "path" "(" NAME NAME [ "via" NAMES ] [ "len" "<=" N ] ")"
///        | "exactly" "{" [ NAME (-> | <->) NAME (";" ...)* ] "}"
/// ```
pub fn parse_query(text: &str, names: &[String]) -> Result<QueryExpr, ParseError> {
    let padded = text
        .replace('(', " ( ")
        .replace(')', " ) ")
        .replace('{', " { ")
        .replace('}', " } ")
        .replace(';', " ; ");
    let tokens: Vec<String> = padded.split_whitespace().map(|s| s.to_string()).collect();
    let mut p = QueryParser { tokens, pos: 0, names };
    let expr = p.expr()?;
    if p.pos != p.tokens.len() {
        return err(1, format!("trailing input at `{}`", p.tokens[p.pos]));
    }
    Ok(expr)
}

struct QueryParser<'a> {
    tokens: Vec<String>,
    pos: usize,
    names: &'a [String],
}

impl QueryParser<'_> {
    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(|s| s.as_str())
    }

    fn next(&mut self) -> Result<&str, ParseError> {
        let t = self
            .tokens
            .get(self.pos)
            .ok_or(ParseError { line: 1, message: "unexpected end of query".into() })?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &str) -> Result<(), ParseError> {
        let got = self.next()?;
        if got == want {
            Ok(())
        } else {
            err(1, format!("expected `{want}`, got `{got}`"))
        }
    }

    fn node(&mut self) -> Result<NodeId, ParseError> {
        let t = self.next()?.to_string();
        resolve(self.names, &t, 1)
    }

    fn expr(&mut self) -> Result<QueryExpr, ParseError> {
        let mut items = vec![self.term()?];
        while self.peek() == Some("or") {
            self.next()?;
            items.push(self.term()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { QueryExpr::Or(items) })
    }

    fn term(&mut self) -> Result<QueryExpr, ParseError> {
        let mut items = vec![self.unary()?];
        while self.peek() == Some("and") {
            self.next()?;
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { QueryExpr::And(items) })
    }

    fn unary(&mut self) -> Result<QueryExpr, ParseError> {
        match self.peek() {
            Some("not") => {
                self.next()?;
                Ok(QueryExpr::Not(Box::new(self.unary()?)))
            }
            Some("(") => {
                self.next()?;
                let inner = self.expr()?;
                self.expect(")")?;
                Ok(inner)
            }
            _ => self.atom(),
        }
    }

    fn node_list_until(&mut self, stops: &[&str]) -> Result<NodeSet, ParseError> {
        let mut set = NodeSet::EMPTY;
        while let Some(t) = self.peek() {
            if stops.contains(&t) {
                break;
            }
            let t = self.next()?.to_string();
            if t != "-" {
                set.insert(resolve(self.names, &t, 1)?);
            }
        }
        Ok(set)
    }

    fn atom(&mut self) -> Result<QueryExpr, ParseError> {
        match self.next()? {
            "edge" => {
                let x = self.node()?;
                let kind = self.next()?.to_string();
                let y = self.node()?;
                match kind.as_str() {
                    "->" => Ok(QueryExpr::DirEdge(x, y)),
                    "<->" => Ok(QueryExpr::BiEdge(x, y)),
                    other => err(1, format!("unknown edge kind `{other}`")),
                }
            }
            "anc" => {
                let x = self.node()?;
                let y = self.node()?;
                Ok(QueryExpr::Ancestral(x, y))
            }
            kw @ ("con" | "sep") => {
                let connected = kw == "con";
                self.expect("(")?;
                let x = self.node()?;
                let y = self.node()?;
                let mut c = NodeSet::EMPTY;
                let mut j = NodeSet::EMPTY;
                if self.peek() == Some("|") {
                    self.next()?;
                    c = self.node_list_until(&["||", ")"])?;
                }
                if self.peek() == Some("||") {
                    self.next()?;
                    j = self.node_list_until(&[")"])?;
                }
                self.expect(")")?;
                let spec = TestSpec::new(x, y, c, j)
                    .map_err(|e| ParseError { line: 1, message: e.to_string() })?;
                let conn = QueryExpr::Connected(spec);
                Ok(if connected { conn } else { QueryExpr::Not(Box::new(conn)) })
            }
            "path" => {
                self.expect("(")?;
                let x = self.node()?;
                let y = self.node()?;
                let mut waypoints = Vec::new();
                let mut max_len = None;
                if self.peek() == Some("via") {
                    self.next()?;
                    while !matches!(self.peek(), Some("len") | Some(")") | None) {
                        waypoints.push(self.node()?);
                    }
                }
                if self.peek() == Some("len") {
                    self.next()?;
                    self.expect("<=")?;
                    let bound = self.next()?.to_string();
                    max_len = Some(bound.parse::<u32>().map_err(|_| ParseError {
                        line: 1,
                        message: format!("expected a length bound, got `{bound}`"),
                    })?);
                }
                self.expect(")")?;
                Ok(QueryExpr::Path { x, y, waypoints, max_len })
            }
            "exactly" => {
                self.expect("{")?;
                let mut g = MixedGraph::new(self.names.to_vec())
                    .map_err(|e| ParseError { line: 1, message: e.to_string() })?;
                while self.peek() != Some("}") {
                    let x = self.node()?;
                    let kind = self.next()?.to_string();
                    let y = self.node()?;
                    let result = match kind.as_str() {
                        "->" => g.add_directed(x, y),
                        "<->" => g.add_bidirected(x, y),
                        other => return err(1, format!("unknown edge kind `{other}`")),
                    };
                    result.map_err(|e| ParseError { line: 1, message: e.to_string() })?;
                    if self.peek() == Some(";") {
                        self.next()?;
                    }
                }
                self.expect("}")?;
                Ok(QueryExpr::ExactGraph(g))
            }
            other => err(1, format!("unknown query atom `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["x", "y", "z", "w"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn graph_parse_and_print_round_trip() {
        let text = "nodes: x y\nedge x -> y\n";
        let g = parse_graph(text).unwrap();
        assert!(g.has_directed(NodeId(0), NodeId(1)));
        assert_eq!(print_graph(&g), text);
    }

    #[test]
    fn graph_parse_reports_position() {
        let e = parse_graph("nodes: a b\nedge a => b\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_graph("edge a -> b\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn relation_lines_round_trip() {
        let (universe, rels) =
            parse_relations("nodes: x y z w\nsep x y | z || w\ncon x z | - || -\n", None)
                .unwrap();
        assert_eq!(universe, names());
        assert_eq!(rels.len(), 2);
        assert_eq!(rels[0].spec.conditioning, NodeSet::singleton(NodeId(2)));
        assert_eq!(rels[0].spec.intervention, NodeSet::singleton(NodeId(3)));
        assert!(!rels[0].connected);
        let printed = print_relations(&universe, &rels, true);
        let (u2, r2) = parse_relations(&printed, None).unwrap();
        assert_eq!(u2, universe);
        assert_eq!(r2, rels);
    }

    #[test]
    fn experiments_round_trip() {
        let exps = parse_experiments("exp x y z || z\nexp x y || -\n", &names()).unwrap();
        assert_eq!(exps.len(), 2);
        assert_eq!(exps[0].intervened, NodeSet::singleton(NodeId(2)));
        let printed = print_experiments(&names(), &exps);
        assert_eq!(parse_experiments(&printed, &names()).unwrap(), exps);
    }

    #[test]
    fn knowledge_forms() {
        let text = "assume acyclic\nassume no-latents\n\
                    know edge x -> y present\n\
                    know edge x <-> z absent\n\
                    know ancestral x w absent\n\
                    know path x w via z len <= 4 present\n";
        let (assumptions, constraints) = parse_knowledge(text, &names()).unwrap();
        assert!(assumptions.acyclic && assumptions.no_latents);
        assert_eq!(constraints.len(), 4);
        assert_eq!(
            constraints[3],
            BackgroundConstraint::Path {
                x: NodeId(0),
                y: NodeId(3),
                waypoints: vec![NodeId(2)],
                max_len: Some(4),
                present: true,
            }
        );
    }

    #[test]
    fn query_grammar() {
        let q = parse_query("edge x -> y or not edge y -> x", &names()).unwrap();
        assert!(matches!(q, QueryExpr::Or(_)));
        let q = parse_query("exactly { x -> y ; z -> y }", &names()).unwrap();
        match q {
            QueryExpr::ExactGraph(g) => {
                assert!(g.has_directed(NodeId(0), NodeId(1)));
                assert!(g.has_directed(NodeId(2), NodeId(1)));
                assert_eq!(g.edge_count(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let q = parse_query("sep ( x z | y || - ) and anc x y", &names()).unwrap();
        assert!(matches!(q, QueryExpr::And(_)));
        assert!(parse_query("edge x => y", &names()).is_err());
        assert!(parse_query("con ( x q )", &names()).is_err());
    }

    #[test]
    fn unknown_nodes_are_rejected_with_line_numbers() {
        let e = parse_relations("nodes: a b\nsep a q | - || -\n", None).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains('q'));
    }
}
