/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_curves_free: (a: number, b: number) => void;
export const combine: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const combiner_ids: () => [number, number];
export const curves_cos_to_agg: (a: number, b: number) => [number, number];
export const curves_grad_norms: (a: number, b: number) => [number, number];
export const curves_losses: (a: number, b: number) => [number, number];
export const curves_n_tasks: (a: number) => number;
export const curves_steps: (a: number) => [number, number];
export const descend: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const train: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
