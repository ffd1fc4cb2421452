/* tslint:disable */
/* eslint-disable */

/**
 * Per-task traces of a short training run on a two-regression-task suite
 * whose second loss is multiplied by `scale`.
 */
export class Curves {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    cos_to_agg(t: number): Float64Array;
    /**
     * Last-shared-layer norm of task `t`'s weighted gradient.
     */
    grad_norms(t: number): Float64Array;
    losses(t: number): Float64Array;
    n_tasks(): number;
    steps(): Float64Array;
}

export function combine(method: string, g1x: number, g1y: number, g2x: number, g2y: number, seed: number): Float64Array;

export function combiner_ids(): any[];

/**
 * Flattened `[x0, y0, x1, y1, ...]` descent path.
 */
export function descend(method: string, beta: number, x: number, y: number, lr: number, steps: number): Float64Array;

export function train(method: string, scale: number, steps: number, seed: number): Curves;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_curves_free: (a: number, b: number) => void;
    readonly combine: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly combiner_ids: () => [number, number];
    readonly curves_cos_to_agg: (a: number, b: number) => [number, number];
    readonly curves_grad_norms: (a: number, b: number) => [number, number];
    readonly curves_losses: (a: number, b: number) => [number, number];
    readonly curves_n_tasks: (a: number) => number;
    readonly curves_steps: (a: number) => [number, number];
    readonly descend: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly train: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
