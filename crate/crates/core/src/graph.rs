//! Small directed-graph helpers over adjacency lists indexed by `usize`.

use std::collections::VecDeque;

/// Strongly connected components of a directed graph.
#[derive(Debug, Clone)]
pub struct Components {
    /// Component index of every node. Components are numbered in reverse
    /// topological order (sinks first), as produced by Tarjan's algorithm.
    pub of: Vec<usize>,
    pub count: usize,
    /// Whether the component contains a cycle (more than one node or a self-loop).
    pub cyclic: Vec<bool>,
}

impl Components {
    pub fn on_cycle(&self, node: usize) -> bool {
        self.cyclic[self.of[node]]
    }
}

/// Tarjan's algorithm, iterative so deep graphs do not overflow the stack.
pub fn strongly_connected(adj: &[Vec<usize>]) -> Components {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut of = vec![UNSEEN; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut count = 0;
    let mut sizes = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut frames: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = frames.last_mut() {
            if let Some(&w) = adj[v].get(*child) {
                *child += 1;
                if index[w] == UNSEEN {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut size = 0;
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    of[w] = count;
                    size += 1;
                    if w == v {
                        break;
                    }
                }
                sizes.push(size);
                count += 1;
            }
        }
    }

    let mut cyclic: Vec<bool> = sizes.iter().map(|&s| s > 1).collect();
    for (v, targets) in adj.iter().enumerate() {
        if targets.contains(&v) {
            cyclic[of[v]] = true;
        }
    }
    Components { of, count, cyclic }
}

/// Nodes reachable from `start` (including it).
pub fn reachable_from(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Nodes from which some node in `targets` is reachable (including the targets).
pub fn can_reach(adj: &[Vec<usize>], targets: &[bool]) -> Vec<bool> {
    distances_to(adj, targets).into_iter().map(|d| d != usize::MAX).collect()
}

/// Length of a shortest path from each node to the nearest node in
/// `targets`; `usize::MAX` where none is reachable.
pub fn distances_to(adj: &[Vec<usize>], targets: &[bool]) -> Vec<usize> {
    let mut rev = vec![Vec::new(); adj.len()];
    for (v, succ) in adj.iter().enumerate() {
        for &w in succ {
            rev[w].push(v);
        }
    }
    let mut dist: Vec<usize> = targets.iter().map(|&t| if t { 0 } else { usize::MAX }).collect();
    let mut queue: VecDeque<usize> = (0..adj.len()).filter(|&v| targets[v]).collect();
    while let Some(v) = queue.pop_front() {
        for &u in &rev[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Breadth-first shortest path from `start` to the nearest node satisfying
/// `goal`. Neighbours are explored in adjacency order, so ties resolve to
/// the lowest-listed successor.
pub fn bfs_path(adj: &[Vec<usize>], start: usize, goal: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
    let mut parent = vec![usize::MAX; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        if goal(v) {
            let mut path = vec![v];
            let mut cur = v;
            while cur != start {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = v;
                queue.push_back(w);
            }
        }
    }
    None
}

/// Breadth-first distances from `start`; `usize::MAX` marks unreachable nodes.
pub fn bfs_distances(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}
