/* tslint:disable */
/* eslint-disable */

/**
 * Preprocesses tab-separated check-ins and returns the global graph as JSON.
 */
export function build_graph(tsv: string): string;

/**
 * Row-major `len x width` sinusoidal position table.
 */
export function positional_encoding(len: number, width: number): Float64Array;

/**
 * Bundled toy check-in file, used as the page's default input.
 */
export function sample_checkins(): string;

/**
 * Time2Vec components sampled at `samples` points of `[0, period)`,
 * row-major `samples x width`.
 */
export function time2vec_curves(omega: Float64Array, phase: Float64Array, period: number, samples: number): Float64Array;

/**
 * Freshly initialised Time2Vec parameters: `omega` followed by `phase`.
 */
export function time2vec_init(width: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly build_graph: (a: number, b: number) => [number, number, number, number];
    readonly positional_encoding: (a: number, b: number) => [number, number, number, number];
    readonly sample_checkins: () => [number, number];
    readonly time2vec_curves: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly time2vec_init: (a: number, b: bigint) => [number, number, number, number];
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
