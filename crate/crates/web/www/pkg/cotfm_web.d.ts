/* tslint:disable */
/* eslint-disable */

export class Clusters {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly centroids: Float64Array;
    readonly inertia: number;
    readonly labels: Uint32Array;
}

export class Coupling {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Cluster of each source point; all zero outside cluster OT.
     */
    readonly cluster_of: Uint32Array;
    /**
     * Mean squared pairing distance.
     */
    readonly cost: number;
    /**
     * Target index paired with each source index.
     */
    readonly target_of: Uint32Array;
}

export function couple(src: Float64Array, tgt: Float64Array, strategy: string, batch: number, k: number, seed: number): Coupling;

export function kmeans(points: Float64Array, k: number, seed: number): Clusters;

export function sampleDataset(kind: string, n: number, seed: number): Float64Array;

export function sampleSource(n: number, std: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_clusters_free: (a: number, b: number) => void;
    readonly __wbg_coupling_free: (a: number, b: number) => void;
    readonly clusters_centroids: (a: number) => [number, number];
    readonly clusters_inertia: (a: number) => number;
    readonly clusters_labels: (a: number) => [number, number];
    readonly couple: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number];
    readonly coupling_cluster_of: (a: number) => [number, number];
    readonly coupling_cost: (a: number) => number;
    readonly coupling_target_of: (a: number) => [number, number];
    readonly kmeans: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly sampleDataset: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly sampleSource: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
