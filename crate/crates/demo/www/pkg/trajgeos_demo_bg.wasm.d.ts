/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const build_graph: (a: number, b: number) => [number, number, number, number];
export const positional_encoding: (a: number, b: number) => [number, number, number, number];
export const sample_checkins: () => [number, number];
export const time2vec_curves: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const time2vec_init: (a: number, b: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
