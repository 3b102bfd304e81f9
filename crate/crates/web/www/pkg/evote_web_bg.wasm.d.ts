/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_turnoutexplorer_free: (a: number, b: number) => void;
export const compare_captures: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const project_counts: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const turnoutexplorer_new: (a: number, b: number) => [number, number, number];
export const turnoutexplorer_predict: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const turnoutexplorer_summary: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
