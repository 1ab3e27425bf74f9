/* tslint:disable */
/* eslint-disable */

/**
 * Extremality certificate for the cluster of `λ_k`.
 */
export function certify_cluster(kind: string, lmax: number, bumps: Float64Array, k: number): string;

/**
 * `λ_1` ascent from the bumped metric.
 */
export function maximize(kind: string, lmax: number, bumps: Float64Array, max_steps: number): string;

export function mode_labels(kind: string, lmax: number, n: number): string;

/**
 * Eigenvalues, clusters and conformal factor of the bumped metric.
 */
export function spectrum(kind: string, lmax: number, bumps: Float64Array, n: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly certify_cluster: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly maximize: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly mode_labels: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly spectrum: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
