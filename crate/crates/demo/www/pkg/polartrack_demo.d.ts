/* tslint:disable */
/* eslint-disable */

/**
 * Streams a noisy synthetic sequence through the online graph, linking
 * with ground-truth (oracle) edge scores so only the graph policy varies.
 */
export class OnlineDemo {
    free(): void;
    [Symbol.dispose](): void;
    framesDone(): number;
    /**
     * `connectivity` is `prune_skip`, `consecutive` or `dense`.
     */
    constructor(seed: number, connectivity: string);
    /**
     * Layout: `[n_nodes, n_edges, nodes..., edges...]` with five values per
     * retained node `(id, x, y, track, frame)` and three per retained edge
     * `(node_a, node_b, is_inter_frame)`.
     */
    snapshot(): Float64Array;
    /**
     * Process the next frame; false once the sequence is exhausted.
     */
    step(): boolean;
}

/**
 * One noisy synthetic sequence whose gated graphs can be inspected.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Graph over frames `first .. first + len` at the given gate scale.
     *
     * Layout: `[n_nodes, n_edges, nodes..., edges...]` with six values per
     * node `(x, y, yaw, frame, class_id, is_clutter)` and four per edge
     * `(src, dst, is_inter_frame, joins_same_object)`.
     */
    graph(first: number, len: number, gate_scale: number): Float64Array;
    constructor(seed: number);
    numFrames(): number;
}

export function featuresUnderRotation(a: Float64Array, b: Float64Array, dt: number, theta: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_onlinedemo_free: (a: number, b: number) => void;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly featuresUnderRotation: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly onlinedemo_framesDone: (a: number) => number;
    readonly onlinedemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly onlinedemo_snapshot: (a: number) => [number, number];
    readonly onlinedemo_step: (a: number) => [number, number, number];
    readonly scene_graph: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_new: (a: number) => [number, number, number];
    readonly scene_numFrames: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
