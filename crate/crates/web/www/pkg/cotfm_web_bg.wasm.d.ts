/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_clusters_free: (a: number, b: number) => void;
export const __wbg_coupling_free: (a: number, b: number) => void;
export const clusters_centroids: (a: number) => [number, number];
export const clusters_inertia: (a: number) => number;
export const clusters_labels: (a: number) => [number, number];
export const couple: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number];
export const coupling_cluster_of: (a: number) => [number, number];
export const coupling_cost: (a: number) => number;
export const coupling_target_of: (a: number) => [number, number];
export const kmeans: (a: number, b: number, c: number, d: number) => [number, number, number];
export const sampleDataset: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const sampleSource: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
