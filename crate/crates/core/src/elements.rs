//! Lagrange bases on the reference triangle: cubic (P3) for velocity
//! components, quadratic (P2) for pressure.
//!
//! Reference triangle: vertices `v0 = (0,0)`, `v1 = (1,0)`, `v2 = (0,1)`,
//! barycentric coordinates `l0 = 1 - x - y`, `l1 = x`, `l2 = y`.
//!
//! Local node order is fixed and shared by the degree-of-freedom maps in
//! [`crate::spaces`]:
//! - P3: nodes 0..3 at the vertices; nodes `3 + 2e`, `3 + 2e + 1` on local
//!   edge `e` (edge `e` is opposite vertex `e`, runs from its first to its
//!   second vertex in [`EDGE_VERTICES`]), at parameters 1/3 and 2/3 along
//!   the edge; node 9 at the centroid.
//! - P2: nodes 0..3 at the vertices, node `3 + e` at the midpoint of local
//!   edge `e`.

pub const P3_NODES: usize = 10;
pub const P2_NODES: usize = 6;

/// Local edge `e` connects these local vertices (edge `e` opposite vertex `e`).
pub const EDGE_VERTICES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

/// Barycentric coordinates of the P3 nodes in local order.
pub fn p3_node_barycentric(node: usize) -> [f64; 3] {
    debug_assert!(node < P3_NODES);
    let mut l = [0.0; 3];
    match node {
        0..=2 => l[node] = 1.0,
        9 => l = [1.0 / 3.0; 3],
        _ => {
            let e = (node - 3) / 2;
            let [a, b] = EDGE_VERTICES[e];
            let t = if (node - 3) % 2 == 0 {
                1.0 / 3.0
            } else {
                2.0 / 3.0
            };
            l[a] = 1.0 - t;
            l[b] = t;
        }
    }
    l
}

/// Barycentric coordinates of the P2 nodes in local order.
pub fn p2_node_barycentric(node: usize) -> [f64; 3] {
    debug_assert!(node < P2_NODES);
    let mut l = [0.0; 3];
    if node < 3 {
        l[node] = 1.0;
    } else {
        let [a, b] = EDGE_VERTICES[node - 3];
        l[a] = 0.5;
        l[b] = 0.5;
    }
    l
}

/// Reference coordinates `(x, y)` of a P3 node.
pub fn p3_node_xy(node: usize) -> [f64; 2] {
    let l = p3_node_barycentric(node);
    [l[1], l[2]]
}

/// Reference coordinates `(x, y)` of a P2 node.
pub fn p2_node_xy(node: usize) -> [f64; 2] {
    let l = p2_node_barycentric(node);
    [l[1], l[2]]
}

/// Gradients of the barycentric coordinates in reference coordinates.
const GRAD_L: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// Values and reference-coordinate gradients of the ten P3 basis functions
/// at `(x, y)`.
pub fn p3_eval(x: f64, y: f64) -> ([f64; P3_NODES], [[f64; 2]; P3_NODES]) {
    let l = [1.0 - x - y, x, y];
    let mut vals = [0.0; P3_NODES];
    let mut grads = [[0.0; 2]; P3_NODES];

    // dphi accumulates partials w.r.t. the barycentric coordinates; the
    // reference gradient is dphi . GRAD_L.
    let mut set = |node: usize, val: f64, dphi: [f64; 3]| {
        vals[node] = val;
        let mut g = [0.0; 2];
        for i in 0..3 {
            g[0] += dphi[i] * GRAD_L[i][0];
            g[1] += dphi[i] * GRAD_L[i][1];
        }
        grads[node] = g;
    };

    for i in 0..3 {
        let li = l[i];
        let val = 0.5 * li * (3.0 * li - 1.0) * (3.0 * li - 2.0);
        let dv = 0.5 * (27.0 * li * li - 18.0 * li + 2.0);
        let mut dphi = [0.0; 3];
        dphi[i] = dv;
        set(i, val, dphi);
    }
    for e in 0..3 {
        let [a, b] = EDGE_VERTICES[e];
        let (la, lb) = (l[a], l[b]);
        // Node at parameter 1/3 (closer to vertex a): bump on la.
        let mut dphi = [0.0; 3];
        dphi[a] = 4.5 * lb * (6.0 * la - 1.0);
        dphi[b] = 4.5 * la * (3.0 * la - 1.0);
        set(3 + 2 * e, 4.5 * la * lb * (3.0 * la - 1.0), dphi);
        // Node at parameter 2/3 (closer to vertex b): bump on lb.
        let mut dphi = [0.0; 3];
        dphi[a] = 4.5 * lb * (3.0 * lb - 1.0);
        dphi[b] = 4.5 * la * (6.0 * lb - 1.0);
        set(3 + 2 * e + 1, 4.5 * la * lb * (3.0 * lb - 1.0), dphi);
    }
    let dphi = [27.0 * l[1] * l[2], 27.0 * l[0] * l[2], 27.0 * l[0] * l[1]];
    set(9, 27.0 * l[0] * l[1] * l[2], dphi);

    (vals, grads)
}

/// Values and reference-coordinate gradients of the six P2 basis functions
/// at `(x, y)`.
pub fn p2_eval(x: f64, y: f64) -> ([f64; P2_NODES], [[f64; 2]; P2_NODES]) {
    let l = [1.0 - x - y, x, y];
    let mut vals = [0.0; P2_NODES];
    let mut grads = [[0.0; 2]; P2_NODES];

    let mut set = |node: usize, val: f64, dphi: [f64; 3]| {
        vals[node] = val;
        let mut g = [0.0; 2];
        for i in 0..3 {
            g[0] += dphi[i] * GRAD_L[i][0];
            g[1] += dphi[i] * GRAD_L[i][1];
        }
        grads[node] = g;
    };

    for i in 0..3 {
        let li = l[i];
        let mut dphi = [0.0; 3];
        dphi[i] = 4.0 * li - 1.0;
        set(i, li * (2.0 * li - 1.0), dphi);
    }
    for e in 0..3 {
        let [a, b] = EDGE_VERTICES[e];
        let mut dphi = [0.0; 3];
        dphi[a] = 4.0 * l[b];
        dphi[b] = 4.0 * l[a];
        set(3 + e, 4.0 * l[a] * l[b], dphi);
    }

    (vals, grads)
}
