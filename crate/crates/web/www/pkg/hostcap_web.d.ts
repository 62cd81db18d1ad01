/* tslint:disable */
/* eslint-disable */

export function angleSweep(_case: string, v_min: number, v_max: number, theta_to: number, points: number): string;

/**
 * Text of a bundled example case, empty for an unknown name.
 */
export function exampleCase(name: string): string;

/**
 * Names of the bundled single-phase example cases.
 */
export function exampleNames(): string[];

export function pvSurface(_case: string, v_min: number, v_max: number, steps: number): string;

export function solveCase(_case: string, v_min: number, v_max: number, theta_max: number, eta: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly angleSweep: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly exampleCase: (a: number, b: number) => [number, number];
    readonly exampleNames: () => [number, number];
    readonly pvSurface: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly solveCase: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
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
