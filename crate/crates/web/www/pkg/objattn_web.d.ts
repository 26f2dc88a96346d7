/* tslint:disable */
/* eslint-disable */

export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Points `row` at the proposal `index`, as if given a crop of it.
     */
    crop(row: number, index: number): void;
    constructor(seed: bigint);
    /**
     * Moves to the next evaluation condition.
     */
    next_scene(): void;
    /**
     * Continues training on the expert demonstrations; returns the last
     * epoch's loss.
     */
    train(epochs: number): number;
    /**
     * Current scene, attention distribution and selections, as JSON.
     */
    view_json(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly playground_crop: (a: number, b: number, c: number) => [number, number];
    readonly playground_new: (a: bigint) => [number, number, number];
    readonly playground_next_scene: (a: number) => [number, number];
    readonly playground_train: (a: number, b: number) => [number, number, number];
    readonly playground_view_json: (a: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
